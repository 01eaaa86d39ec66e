use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::coupling::Coupling;
use super::invconv::InvConv;
use super::squeeze::{squeeze, unsqueeze};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat_channels, no_grad, Real, Tensor, Var};
use crate::wn::{upsample_mel, Upsampler, WnParams};

/// One flow: channel mixing followed by an affine coupling.
#[derive(Clone, Debug)]
pub struct FlowStep<T: Real> {
    pub invconv: InvConv<T>,
    pub coupling: Coupling,
}

/// The invertible audio-to-latent network.
#[derive(Clone, Debug)]
pub struct WaveGlow<T: Real> {
    config: ModelConfig,
    store: ParamStore<T>,
    upsampler: Upsampler,
    flows: Vec<FlowStep<T>>,
}

/// Forward pass as graph variables, for training.
#[derive(Clone, Debug)]
pub struct FlowTrace<T: Real> {
    /// `[B, group, T/group]`: early outputs in diversion order, then the rest.
    pub z: Var<T>,
    pub sum_log_s: Var<T>,
    pub sum_logdet_w: Var<T>,
    pub batch: usize,
    pub samples: usize,
}

impl<T: Real> FlowTrace<T> {
    /// Per-sample negative log-likelihood without the Gaussian constant.
    pub fn nll(&self, sigma: f64) -> Result<Var<T>> {
        check_sigma(sigma)?;
        let energy = self.z.square().sum().scale(T::from_f64_lossy(0.5 / (sigma * sigma)));
        let total = energy.sub(&self.sum_log_s)?.sub(&self.sum_logdet_w)?;
        Ok(total.scale(T::from_f64_lossy(1.0 / (self.batch * self.samples) as f64)))
    }
}

/// Forward pass values.
#[derive(Clone, Debug)]
pub struct FlowOutput<T> {
    pub z: Tensor<T>,
    pub sum_log_s: f64,
    pub sum_logdet_w: f64,
    pub batch: usize,
    pub samples: usize,
}

/// Negative log-likelihood per audio sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nll {
    /// `[z'z/(2 sigma^2) - sum_log_s - sum_logdet_W] / (B T)`.
    pub per_element: f64,
    /// `per_element + 0.5 ln(2 pi sigma^2)`.
    pub with_constant: f64,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma must be positive, got {sigma}")))
    }
}

pub fn negative_log_likelihood<T: Real>(out: &FlowOutput<T>, sigma: f64) -> Result<Nll> {
    check_sigma(sigma)?;
    let energy: f64 = out.z.data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>() / (2.0 * sigma * sigma);
    let per_element = (energy - out.sum_log_s - out.sum_logdet_w) / (out.batch * out.samples) as f64;
    Ok(Nll { per_element, with_constant: per_element + 0.5 * (2.0 * PI * sigma * sigma).ln() })
}

impl<T: Real> FlowOutput<T> {
    /// Total `log p(x)` of the batch: Gaussian log-density of `z` plus the
    /// log-determinant terms.
    pub fn log_likelihood(&self, sigma: f64) -> Result<f64> {
        let nll = negative_log_likelihood(self, sigma)?;
        Ok(-nll.with_constant * (self.batch * self.samples) as f64)
    }
}

impl<T: Real> WaveGlow<T> {
    /// Build a model with seeded random parameters: rotations for every
    /// `W`, small uniform weights for WN convolutions and the upsampler,
    /// zeros for the WN output layers.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let upsampler = Upsampler::init(&mut store, "upsample", config.upsample, &mut rng);
        let mut flows = Vec::with_capacity(config.n_flows);
        for (k, width) in config.flow_widths().into_iter().enumerate() {
            let invconv = InvConv::init(&mut store, &format!("flows.{k}.invconv"), width, &mut rng)?;
            let wn = WnParams::init(&mut store, &format!("flows.{k}.wn"), config.wn_config(width), &mut rng)?;
            flows.push(FlowStep { invconv, coupling: Coupling::new(wn, width) });
        }
        Ok(WaveGlow { config, store, upsampler, flows })
    }

    /// Rebuild the model structure around an existing parameter store,
    /// e.g. one read from a checkpoint.
    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let template = WaveGlow::<T>::new(config, 0)?;
        if template.store.len() != store.len() {
            return Err(Error::Format(format!(
                "{} parameters supplied, preset {} has {}",
                store.len(),
                template.config.preset,
                template.store.len()
            )));
        }
        for id in template.store.ids() {
            let (want, got) = (template.store.param(id), store.param(id));
            if want.name() != got.name() || want.value().shape() != got.value().shape() {
                return Err(Error::Format(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    got.name(),
                    got.value().shape(),
                    want.name(),
                    want.value().shape()
                )));
            }
        }
        Ok(WaveGlow { store, ..template })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn flows(&self) -> &[FlowStep<T>] {
        &self.flows
    }

    pub fn upsampler(&self) -> &Upsampler {
        &self.upsampler
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Real>(&self) -> WaveGlow<U> {
        WaveGlow {
            config: self.config.clone(),
            store: self.store.cast(),
            upsampler: self.upsampler,
            flows: self
                .flows
                .iter()
                .map(|f| FlowStep {
                    invconv: InvConv::from_param(f.invconv.weight, f.invconv.channels()),
                    coupling: f.coupling.clone(),
                })
                .collect(),
        }
    }

    /// Parameters by role: channel mixing, WN convolution weights and
    /// biases, weight-norm magnitudes, WN output layers, and the upsampler.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let mut invconv = Vec::new();
        let mut convs = Vec::new();
        let mut magnitudes = Vec::new();
        let mut ends = Vec::new();
        for flow in &self.flows {
            invconv.push(flow.invconv.weight);
            let wn = &flow.coupling.wn;
            ends.extend([wn.end.weight, wn.end.bias]);
            for id in wn.param_ids() {
                if ends.contains(&id) {
                    continue;
                }
                if self.store.name(id).ends_with(".g") {
                    magnitudes.push(id);
                } else {
                    convs.push(id);
                }
            }
        }
        vec![
            ("invconv", invconv),
            ("wn_convs", convs),
            ("weight_norm_g", magnitudes),
            ("wn_end", ends),
            ("upsampler", vec![self.upsampler.conv.weight, self.upsampler.conv.bias]),
        ]
    }

    /// Fill every WN output layer with uniform values in `±scale`, so the
    /// couplings stop being identities.
    pub fn randomize_end_layers(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<ParamId> =
            self.flows.iter().flat_map(|f| [f.coupling.wn.end.weight, f.coupling.wn.end.bias]).collect();
        for id in ids {
            self.store.update(id, |d| {
                d.iter_mut().for_each(|v| *v = T::from_f64_lossy(rng.random_range(-scale..scale)));
            });
        }
    }

    /// Mel frames `[B, 80, F]` upsampled and folded to `[B, 80*group, T/group]`.
    pub fn condition(&self, bound: &Bound<T>, mel: &Var<T>, samples: usize) -> Result<Var<T>> {
        upsample_mel(bound, &self.upsampler, mel, samples, self.config.group)
    }

    /// Differentiable forward pass of `audio [B, T]` (T divisible by the
    /// group) conditioned on `mel [B, 80, F]`.
    pub fn forward_graph(&self, bound: &Bound<T>, audio: &Var<T>, mel: &Var<T>) -> Result<FlowTrace<T>> {
        let shape = audio.shape();
        if shape.len() != 2 {
            return Err(Error::shape(format!("audio must be [B, T], got {shape:?}")));
        }
        let (batch, samples) = (shape[0], shape[1]);
        if mel.shape().first() != Some(&batch) {
            return Err(Error::shape(format!("mel batch {:?} does not match audio batch {batch}", mel.shape())));
        }
        let cond = self.condition(bound, mel, samples)?;
        let mut x = squeeze(audio, self.config.group)?;
        let mut early = Vec::new();
        let zero = || Var::constant(Tensor::scalar(T::zero()));
        let (mut sum_log_s, mut sum_logdet) = (zero(), zero());
        for (k, flow) in self.flows.iter().enumerate() {
            if self.config.diverts_before(k) {
                let (out, rest) = x.split_channels(self.config.early_size)?;
                early.push(out);
                x = rest;
            }
            let (y, logdet) = flow.invconv.forward(bound, &x)?;
            sum_logdet = sum_logdet.add(&logdet)?;
            let (y, log_s) = flow.coupling.forward(bound, &y, &cond, k)?;
            sum_log_s = sum_log_s.add(&log_s)?;
            x = y;
        }
        early.push(x);
        let parts: Vec<&Var<T>> = early.iter().collect();
        let z = concat_channels(&parts)?;
        Ok(FlowTrace { z, sum_log_s, sum_logdet_w: sum_logdet, batch, samples })
    }

    /// Forward pass without gradient tracking. Trailing samples beyond a
    /// multiple of the group are dropped with a warning.
    pub fn forward(&self, audio: &Tensor<T>, mel: &Tensor<T>) -> Result<FlowOutput<T>> {
        let audio = self.trim_to_group(audio)?;
        no_grad(|| {
            let bound = self.store.bind_constants();
            let trace = self.forward_graph(&bound, &Var::constant(audio), &Var::constant(mel.clone()))?;
            Ok(FlowOutput {
                z: trace.z.value().clone(),
                sum_log_s: trace.sum_log_s.value().item().to_f64_lossy(),
                sum_logdet_w: trace.sum_logdet_w.value().item().to_f64_lossy(),
                batch: trace.batch,
                samples: trace.samples,
            })
        })
    }

    fn trim_to_group(&self, audio: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = audio.shape();
        if shape.len() != 2 {
            return Err(Error::shape(format!("audio must be [B, T], got {shape:?}")));
        }
        let (batch, len) = (shape[0], shape[1]);
        let keep = len - len % self.config.group;
        if keep == len {
            return Ok(audio.clone());
        }
        if keep == 0 {
            return Err(Error::Contract(format!(
                "audio of {len} samples is shorter than one group of {}",
                self.config.group
            )));
        }
        log::warn!("dropping {} trailing samples to reach a multiple of {}", len - keep, self.config.group);
        let data = audio.data();
        let trimmed = (0..batch).flat_map(|b| data[b * len..b * len + keep].iter().copied()).collect();
        Tensor::new(&[batch, keep], trimmed)
    }

    /// Map latents `z [B, group, Tg]` back to audio `[B, group*Tg]`.
    pub fn inverse(&self, z: &Tensor<T>, mel: &Tensor<T>) -> Result<Tensor<T>> {
        let group = self.config.group;
        if z.rank() != 3 || z.dim(1) != group {
            return Err(Error::shape(format!("z must be [B, {group}, Tg], got {:?}", z.shape())));
        }
        let (batch, steps) = (z.dim(0), z.dim(2));
        if mel.rank() != 3 || mel.dim(0) != batch {
            return Err(Error::shape(format!("mel {:?} does not match z batch {batch}", mel.shape())));
        }
        no_grad(|| {
            let bound = self.store.bind_constants();
            let cond = self.condition(&bound, &Var::constant(mel.clone()), steps * group)?;
            let diverts: Vec<usize> = (0..self.flows.len()).filter(|&k| self.config.diverts_before(k)).collect();
            let z = Var::constant(z.clone());
            let mut early = Vec::with_capacity(diverts.len());
            let mut rest = z;
            for _ in &diverts {
                let (head, tail) = rest.split_channels(self.config.early_size)?;
                early.push(head);
                rest = tail;
            }
            let mut x = rest;
            for (k, flow) in self.flows.iter().enumerate().rev() {
                let y = flow.coupling.inverse(&bound, &x, &cond, k)?;
                x = flow.invconv.inverse(&self.store, &y)?;
                if let Some(pos) = diverts.iter().position(|&d| d == k) {
                    x = concat_channels(&[&early[pos], &x])?;
                }
            }
            Ok(unsqueeze(&x)?.value().clone())
        })
    }
}
