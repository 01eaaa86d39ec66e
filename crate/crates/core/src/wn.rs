//! The coupling conditioner: dilated non-causal gated convolutions with
//! residual and skip paths, conditioned on upsampled mel features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, NormedWeight, ParamId, ParamStore};
use crate::tensor::{conv1d, conv_transpose1d, fold_time, weight_norm, Real, Tensor, Var};

/// Layer geometry of one WN stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WnConfig {
    pub n_layers: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    pub kernel: usize,
    /// Channels of `x_a`, the untouched half.
    pub in_half_channels: usize,
    /// Channels of `log_s` and of `t`.
    pub out_half_channels: usize,
    pub cond_channels: usize,
}

impl WnConfig {
    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.n_layers).map(|i| self.dilation(i)).collect()
    }

    /// Squeezed time steps that can influence one output step.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * ((1 << self.n_layers) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("WN kernel {} must be odd", self.kernel)));
        }
        let sizes = [
            self.n_layers,
            self.residual_channels,
            self.skip_channels,
            self.in_half_channels,
            self.out_half_channels,
            self.cond_channels,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("WN sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// A weight-normalized convolution.
#[derive(Clone, Copy, Debug)]
pub struct NormedConv {
    pub weight: NormedWeight,
    pub bias: ParamId,
}

/// A plain convolution (or transposed convolution).
#[derive(Clone, Copy, Debug)]
pub struct PlainConv {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct WnLayer {
    pub dilated: NormedConv,
    pub cond: NormedConv,
    /// Absent on the last layer, whose residual output is unused.
    pub res: Option<NormedConv>,
    pub skip: NormedConv,
}

#[derive(Clone, Debug)]
pub struct WnParams {
    pub config: WnConfig,
    pub start: NormedConv,
    pub layers: Vec<WnLayer>,
    /// Zero-initialized, so a fresh coupling is the identity.
    pub end: PlainConv,
}

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_init<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (fan_in as f64).sqrt().recip();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound))).expect("positive shape")
}

fn normed_conv<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    (c_out, c_in, kernel): (usize, usize, usize),
    rng: &mut R,
) -> Result<NormedConv> {
    let fan_in = c_in * kernel;
    let weight = store.add_normed(&format!("{name}.weight"), uniform_init(&[c_out, c_in, kernel], fan_in, rng))?;
    let bias = store.add(format!("{name}.bias"), uniform_init(&[c_out], fan_in, rng));
    Ok(NormedConv { weight, bias })
}

impl WnParams {
    /// Register a freshly initialized WN stack under `prefix`.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: WnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (r, s) = (config.residual_channels, config.skip_channels);
        let start = normed_conv(store, &format!("{prefix}.start"), (r, config.in_half_channels, 1), rng)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = format!("{prefix}.layers.{i}");
            let dilated = normed_conv(store, &format!("{p}.dilated"), (2 * r, r, config.kernel), rng)?;
            let cond = normed_conv(store, &format!("{p}.cond"), (2 * r, config.cond_channels, 1), rng)?;
            let res = if i + 1 < config.n_layers {
                Some(normed_conv(store, &format!("{p}.res"), (r, r, 1), rng)?)
            } else {
                None
            };
            let skip = normed_conv(store, &format!("{p}.skip"), (s, r, 1), rng)?;
            layers.push(WnLayer { dilated, cond, res, skip });
        }
        let out = 2 * config.out_half_channels;
        let end = PlainConv {
            weight: store.add(format!("{prefix}.end.weight"), Tensor::zeros(&[out, s, 1])?),
            bias: store.add(format!("{prefix}.end.bias"), Tensor::zeros(&[out])?),
        };
        Ok(WnParams { config, start, layers, end })
    }

    /// Every parameter of the stack.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let conv = |c: &NormedConv| [c.weight.v, c.weight.g, c.bias];
        let mut ids: Vec<ParamId> = conv(&self.start).to_vec();
        for layer in &self.layers {
            ids.extend(conv(&layer.dilated));
            ids.extend(conv(&layer.cond));
            if let Some(res) = &layer.res {
                ids.extend(conv(res));
            }
            ids.extend(conv(&layer.skip));
        }
        ids.extend([self.end.weight, self.end.bias]);
        ids
    }
}

fn apply_normed<T: Real>(
    bound: &Bound<T>,
    conv: &NormedConv,
    x: &Var<T>,
    dilation: usize,
    padding: usize,
) -> Result<Var<T>> {
    let w = weight_norm(bound.var(conv.weight.v), bound.var(conv.weight.g))?;
    conv1d(x, &w, Some(bound.var(conv.bias)), dilation, padding)
}

/// `(log_s, t) = WN(x_a, cond)`, each `[B, out_half, Tg]`.
pub fn wn_apply<T: Real>(
    bound: &Bound<T>,
    params: &WnParams,
    x_a: &Var<T>,
    cond: &Var<T>,
) -> Result<(Var<T>, Var<T>)> {
    let cfg = &params.config;
    if x_a.shape().len() != 3 || cond.shape().len() != 3 {
        return Err(Error::shape(format!(
            "WN expects [B, C, T] inputs, got {:?} and {:?}",
            x_a.shape(),
            cond.shape()
        )));
    }
    if x_a.shape()[2] != cond.shape()[2] || x_a.shape()[0] != cond.shape()[0] {
        return Err(Error::shape(format!(
            "conditioning {:?} is not aligned with x_a {:?}",
            cond.shape(),
            x_a.shape()
        )));
    }
    let r = cfg.residual_channels;
    let mut resid = apply_normed(bound, &params.start, x_a, 1, 0)?;
    let mut skip: Option<Var<T>> = None;
    for (i, layer) in params.layers.iter().enumerate() {
        let d = cfg.dilation(i);
        let pad = d * (cfg.kernel - 1) / 2;
        let h = apply_normed(bound, &layer.dilated, &resid, d, pad)?
            .add(&apply_normed(bound, &layer.cond, cond, 1, 0)?)?;
        let (a, b) = h.split_channels(r)?;
        let z = a.tanh().mul(&b.sigmoid())?;
        if let Some(res) = &layer.res {
            resid = resid.add(&apply_normed(bound, res, &z, 1, 0)?)?;
        }
        let s = apply_normed(bound, &layer.skip, &z, 1, 0)?;
        skip = Some(match skip {
            Some(acc) => acc.add(&s)?,
            None => s,
        });
    }
    let skip = skip.expect("at least one layer");
    let out = conv1d(&skip, bound.var(params.end.weight), Some(bound.var(params.end.bias)), 1, 0)?;
    out.split_channels(cfg.out_half_channels)
}

/// Geometry of the learned mel upsampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleConfig {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        UpsampleConfig { channels: 80, kernel: 1024, stride: 256 }
    }
}

impl UpsampleConfig {
    /// Samples produced from `frames` mel frames.
    pub fn covered_samples(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.stride + self.kernel
        }
    }

    /// Fewest mel frames covering `samples`.
    pub fn frames_needed(&self, samples: usize) -> usize {
        1 + samples.saturating_sub(self.kernel).div_ceil(self.stride)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Upsampler {
    pub config: UpsampleConfig,
    pub conv: PlainConv,
}

impl Upsampler {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: UpsampleConfig,
        rng: &mut R,
    ) -> Self {
        let c = config.channels;
        let fan_in = c * config.kernel;
        let weight = store.add(format!("{prefix}.weight"), uniform_init(&[c, c, config.kernel], fan_in, rng));
        let bias = store.add(format!("{prefix}.bias"), uniform_init(&[c], fan_in, rng));
        Upsampler { config, conv: PlainConv { weight, bias } }
    }
}

/// Expand mel frames `[B, 80, F]` to the squeezed audio rate:
/// `[B, 80*group, target_samples/group]`, channel `c*group + j` holding
/// sample `t*group + j` of mel channel `c`.
pub fn upsample_mel<T: Real>(
    bound: &Bound<T>,
    up: &Upsampler,
    mel: &Var<T>,
    target_samples: usize,
    group: usize,
) -> Result<Var<T>> {
    let shape = mel.shape();
    if shape.len() != 3 || shape[1] != up.config.channels {
        return Err(Error::shape(format!(
            "mel must be [B, {}, frames], got {shape:?}",
            up.config.channels
        )));
    }
    if group == 0 || target_samples % group != 0 {
        return Err(Error::Contract(format!("{target_samples} samples are not divisible by group {group}")));
    }
    let frames = shape[2];
    if up.config.covered_samples(frames) < target_samples {
        return Err(Error::Coverage { needed: up.config.frames_needed(target_samples), available: frames });
    }
    let full = conv_transpose1d(mel, bound.var(up.conv.weight), Some(bound.var(up.conv.bias)), up.config.stride)?;
    let trimmed = full.narrow(2, 0, target_samples)?;
    fold_time(&trimmed, group)
}
