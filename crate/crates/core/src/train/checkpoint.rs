//! Checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, UTF-8 JSON
//! manifest, body of little-endian `f32` values, then the XxHash64 (seed 0)
//! of the body as a little-endian `u64`. The manifest lists every tensor
//! with its name, shape, dtype and byte offset into the body.

use std::fs;
use std::hash::Hasher;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::flow::{ModelConfig, WaveGlow};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WGLWCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "waveglow-checkpoint";
const PARAM_PREFIX: &str = "param/";
const ADAM_M_PREFIX: &str = "adam.m/";
const ADAM_V_PREFIX: &str = "adam.v/";

/// Optimizer and schedule state needed to continue training exactly.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub config: TrainConfig,
    /// Completed iterations.
    pub iteration: u64,
    pub lr: f64,
    pub lr_dropped: bool,
    pub rng: ChaCha8Rng,
    pub adam: AdamState<f32>,
    /// Recent per-iteration losses used by the plateau rule.
    pub history: Vec<f64>,
}

/// Model parameters plus optional training state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ParamStore<f32>,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct RngEntry {
    seed: Vec<u8>,
    stream: u64,
    /// Decimal `u128`.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct TrainingEntry {
    config: TrainConfig,
    iteration: u64,
    lr: f64,
    lr_dropped: bool,
    rng: RngEntry,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    adam_step: u64,
    history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    model: ModelConfig,
    training: Option<TrainingEntry>,
    tensors: Vec<TensorEntry>,
}

fn body_checksum(body: &[u8]) -> u64 {
    let mut h = XxHash64::with_seed(0);
    h.write(body);
    h.finish()
}

impl Checkpoint {
    /// Parameters only, in 32-bit precision.
    pub fn of_model<T: Real>(model: &WaveGlow<T>) -> Self {
        Checkpoint { model: model.config().clone(), params: model.store().cast(), training: None }
    }

    pub fn to_model<T: Real>(&self) -> Result<WaveGlow<T>> {
        WaveGlow::from_store(self.model.clone(), self.params.cast())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, &Tensor<f32>)> = self
            .params
            .ids()
            .map(|id| (format!("{PARAM_PREFIX}{}", self.params.name(id)), self.params.get(id)))
            .collect();
        let training = self.training.as_ref().map(|t| {
            for (id, (m, v)) in self.params.ids().zip(t.adam.m.iter().zip(&t.adam.v)) {
                let name = self.params.name(id);
                tensors.push((format!("{ADAM_M_PREFIX}{name}"), m));
                tensors.push((format!("{ADAM_V_PREFIX}{name}"), v));
            }
            TrainingEntry {
                config: t.config.clone(),
                iteration: t.iteration,
                lr: t.lr,
                lr_dropped: t.lr_dropped,
                rng: RngEntry {
                    seed: t.rng.get_seed().to_vec(),
                    stream: t.rng.get_stream(),
                    word_pos: t.rng.get_word_pos().to_string(),
                },
                adam_beta1: t.adam.beta1,
                adam_beta2: t.adam.beta2,
                adam_eps: t.adam.eps,
                adam_step: t.adam.step,
                history: t.history.clone(),
            }
        });
        if let Some(t) = &self.training {
            t.adam.check(&self.params)?;
            if t.history.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract("loss history holds non-finite values".into()));
            }
        }

        let mut body = Vec::with_capacity(4 * tensors.iter().map(|(_, t)| t.numel()).sum::<usize>());
        let mut entries = Vec::with_capacity(tensors.len());
        for (name, t) in tensors {
            entries.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset: body.len() as u64,
            });
            for v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT_NAME.into(),
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            training,
            tensors: entries,
        };
        let header = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;

        let mut out = Vec::with_capacity(16 + header.len() + body.len() + 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        out.extend_from_slice(&body_checksum(&body).to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let body_start = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(16))
            .filter(|&end| end + 8 <= bytes.len())
            .ok_or_else(|| Error::Format(format!("manifest length {header_len} exceeds file size {}", bytes.len())))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| Error::Format(format!("bad checkpoint manifest: {e}")))?;
        if manifest.format != FORMAT_NAME || manifest.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint {} version {}, expected {FORMAT_NAME} version {CHECKPOINT_VERSION}",
                manifest.format, manifest.version
            )));
        }
        let body = &bytes[body_start..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
        let actual = body_checksum(body);
        if stored != actual {
            return Err(Error::Format(format!(
                "checkpoint checksum mismatch: stored {stored:016x}, body hashes to {actual:016x}"
            )));
        }

        let mut expected_offset = 0usize;
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for entry in &manifest.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Format(format!("tensor {} has dtype {}, expected f32", entry.name, entry.dtype)));
            }
            let numel: usize = entry.shape.iter().product();
            let start = usize::try_from(entry.offset).unwrap_or(usize::MAX);
            let end = start.checked_add(numel * 4).filter(|&e| e <= body.len());
            let Some(end) = end.filter(|_| start == expected_offset) else {
                return Err(Error::Format(format!(
                    "tensor {} at offset {} does not fit the body layout",
                    entry.name, entry.offset
                )));
            };
            expected_offset = end;
            let data = body[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(&entry.shape, data)
                .map_err(|e| Error::Format(format!("tensor {}: {e}", entry.name)))?;
            if let Some(name) = entry.name.strip_prefix(PARAM_PREFIX) {
                params.add(name, tensor);
            } else if let Some(name) = entry.name.strip_prefix(ADAM_M_PREFIX) {
                m.push((name.to_string(), tensor));
            } else if let Some(name) = entry.name.strip_prefix(ADAM_V_PREFIX) {
                v.push((name.to_string(), tensor));
            } else {
                return Err(Error::Format(format!("unexpected tensor {}", entry.name)));
            }
        }
        if expected_offset != body.len() {
            return Err(Error::Format(format!(
                "body holds {} bytes, tensors cover {expected_offset}",
                body.len()
            )));
        }

        let training = match manifest.training {
            None => None,
            Some(t) => {
                let order_matches = |moments: &[(String, Tensor<f32>)]| {
                    moments.len() == params.len() && params.ids().zip(moments).all(|(id, (n, _))| params.name(id) == n)
                };
                if !order_matches(&m) || !order_matches(&v) {
                    return Err(Error::Format("optimizer moments do not match the parameter list".into()));
                }
                let seed: [u8; 32] = t
                    .rng
                    .seed
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Format(format!("rng seed has {} bytes, expected 32", t.rng.seed.len())))?;
                let word_pos: u128 = t
                    .rng
                    .word_pos
                    .parse()
                    .map_err(|e| Error::Format(format!("rng word position {:?}: {e}", t.rng.word_pos)))?;
                let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
                rng.set_stream(t.rng.stream);
                rng.set_word_pos(word_pos);
                let adam = AdamState {
                    beta1: t.adam_beta1,
                    beta2: t.adam_beta2,
                    eps: t.adam_eps,
                    step: t.adam_step,
                    m: m.into_iter().map(|(_, t)| t).collect(),
                    v: v.into_iter().map(|(_, t)| t).collect(),
                };
                Some(TrainingState {
                    config: t.config,
                    iteration: t.iteration,
                    lr: t.lr,
                    lr_dropped: t.lr_dropped,
                    rng,
                    adam,
                    history: t.history,
                })
            }
        };
        Ok(Checkpoint { model: manifest.model, params, training })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes).map_err(|e| Error::from(e).at_path(&tmp))?;
        fs::rename(&tmp, path).map_err(|e| Error::from(e).at_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::from_bytes(&bytes).map_err(|e| e.at_path(path))
    }
}
