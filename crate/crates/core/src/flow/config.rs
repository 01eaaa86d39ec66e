use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wn::{UpsampleConfig, WnConfig};

/// WN stack size shared by every coupling of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WnShape {
    pub n_layers: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
}

/// Full architecture description of a flow model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: String,
    /// Audio samples stacked per squeezed step.
    pub group: usize,
    pub n_flows: usize,
    /// Divert channels before every flow `k > 0` with `k % early_every == 0`;
    /// zero disables early outputs.
    pub early_every: usize,
    pub early_size: usize,
    pub wn: WnShape,
    pub upsample: UpsampleConfig,
}

impl ModelConfig {
    /// Full-size architecture: 12 flows, early outputs of 2 channels every
    /// 4 flows, WN with 8 layers of 512 residual and 256 skip channels.
    pub fn paper() -> Self {
        ModelConfig {
            preset: "paper".into(),
            group: 8,
            n_flows: 12,
            early_every: 4,
            early_size: 2,
            wn: WnShape { n_layers: 8, residual_channels: 512, skip_channels: 256, kernel: 3 },
            upsample: UpsampleConfig::default(),
        }
    }

    /// Desk-scale training preset.
    pub fn tiny() -> Self {
        ModelConfig {
            preset: "tiny".into(),
            group: 8,
            n_flows: 4,
            early_every: 0,
            early_size: 0,
            wn: WnShape { n_layers: 4, residual_channels: 64, skip_channels: 64, kernel: 3 },
            upsample: UpsampleConfig::default(),
        }
    }

    /// Smallest model used for dense Jacobian and likelihood oracles.
    pub fn micro() -> Self {
        ModelConfig {
            preset: "micro".into(),
            group: 4,
            n_flows: 2,
            early_every: 0,
            early_size: 0,
            wn: WnShape { n_layers: 2, residual_channels: 16, skip_channels: 16, kernel: 3 },
            upsample: UpsampleConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::Config(format!("unknown preset {other:?}, expected paper, tiny or micro"))),
        }
    }

    pub fn early_outputs_enabled(&self) -> bool {
        self.early_every > 0 && self.early_size > 0
    }

    /// Whether channels are diverted just before flow `k`.
    pub fn diverts_before(&self, k: usize) -> bool {
        self.early_outputs_enabled() && k > 0 && k % self.early_every == 0
    }

    /// Channel count seen by each flow.
    pub fn flow_widths(&self) -> Vec<usize> {
        let mut width = self.group;
        (0..self.n_flows)
            .map(|k| {
                if self.diverts_before(k) {
                    width -= self.early_size;
                }
                width
            })
            .collect()
    }

    pub fn wn_config(&self, channels: usize) -> WnConfig {
        let half = channels / 2;
        WnConfig {
            n_layers: self.wn.n_layers,
            residual_channels: self.wn.residual_channels,
            skip_channels: self.wn.skip_channels,
            kernel: self.wn.kernel,
            in_half_channels: half,
            out_half_channels: channels - half,
            cond_channels: self.upsample.channels * self.group,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group == 0 || self.n_flows == 0 {
            return Err(Error::Config(format!("group and n_flows must be positive: {self:?}")));
        }
        let diverted = (1..self.n_flows).filter(|&k| self.diverts_before(k)).count() * self.early_size;
        if diverted + 2 > self.group {
            return Err(Error::Config(format!(
                "early outputs divert {diverted} of {} channels, leaving fewer than 2",
                self.group
            )));
        }
        for width in self.flow_widths() {
            self.wn_config(width).validate()?;
        }
        if self.upsample.stride == 0 || self.upsample.kernel == 0 || self.upsample.channels == 0 {
            return Err(Error::Config(format!("invalid upsampler {:?}", self.upsample)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_width_schedule() {
        assert_eq!(ModelConfig::paper().flow_widths(), vec![8, 8, 8, 8, 6, 6, 6, 6, 4, 4, 4, 4]);
    }

    #[test]
    fn presets_validate() {
        for name in ["paper", "tiny", "micro"] {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ModelConfig::preset("huge").is_err());
    }

    #[test]
    fn tiny_has_no_early_outputs() {
        assert_eq!(ModelConfig::tiny().flow_widths(), vec![8; 4]);
    }
}
