use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::ModelConfig;

/// Training hyperparameters, read from flat `key=value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Samples per training clip.
    pub clip_len: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate after the plateau rule fires.
    pub lr_drop: f64,
    /// Latent standard deviation used in the loss.
    pub sigma: f64,
    pub max_iters: u64,
    pub seed: u64,
    /// Iterations per window of the plateau rule; zero disables it.
    pub plateau_window: usize,
    pub preset: String,
    /// Write a checkpoint every this many iterations; zero writes only the
    /// initial and final ones.
    pub checkpoint_every: u64,
}

pub const CONFIG_KEYS: [&str; 10] = [
    "clip_len",
    "batch",
    "lr",
    "lr_drop",
    "sigma",
    "max_iters",
    "seed",
    "plateau_window",
    "preset",
    "checkpoint_every",
];

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            clip_len: 8000,
            batch: 2,
            lr: 1e-4,
            lr_drop: 5e-5,
            sigma: 0.5f64.sqrt(),
            max_iters: 500,
            seed: 0,
            plateau_window: 100,
            preset: "tiny".into(),
            checkpoint_every: 100,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value {value:?} for key {key}: {e}")))
}

impl TrainConfig {
    /// Full-scale hyperparameters with the large preset.
    pub fn paper() -> Self {
        TrainConfig { clip_len: 16_000, batch: 24, preset: "paper".into(), ..Self::default() }
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "clip_len" => self.clip_len = parse_value(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "lr_drop" => self.lr_drop = parse_value(key, value)?,
            "sigma" => self.sigma = parse_value(key, value)?,
            "max_iters" => self.max_iters = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "plateau_window" => self.plateau_window = parse_value(key, value)?,
            "preset" => self.preset = value.to_string(),
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key {other:?} (known keys: {})",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::parse(&text).map_err(|e| e.at_path(path))
    }

    /// The `key=value` form read back by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "clip_len={}", self.clip_len);
        let _ = writeln!(out, "batch={}", self.batch);
        let _ = writeln!(out, "lr={:?}", self.lr);
        let _ = writeln!(out, "lr_drop={:?}", self.lr_drop);
        let _ = writeln!(out, "sigma={:?}", self.sigma);
        let _ = writeln!(out, "max_iters={}", self.max_iters);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "plateau_window={}", self.plateau_window);
        let _ = writeln!(out, "preset={}", self.preset);
        let _ = writeln!(out, "checkpoint_every={}", self.checkpoint_every);
        out
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::preset(&self.preset)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_config()?;
        if !(self.lr_drop > 0.0 && self.lr > self.lr_drop) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "need lr > lr_drop > 0, got lr={} lr_drop={}",
                self.lr, self.lr_drop
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma={} must be positive", self.sigma)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.clip_len == 0 || self.clip_len % model.group != 0 {
            return Err(Error::Config(format!(
                "clip_len={} must be a positive multiple of group {}",
                self.clip_len, model.group
            )));
        }
        Ok(())
    }
}
