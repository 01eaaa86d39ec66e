use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, sample_clips, AdamState, Checkpoint, TrainConfig, TrainingState};
use crate::error::{Error, Result};
use crate::flow::WaveGlow;
use crate::signal::AudioClip;
use crate::tensor::Var;

/// Relative windowed improvement below which the learning rate drops.
pub const PLATEAU_THRESHOLD: f64 = 1e-3;

/// Stream of the data-sampling generator; model init uses stream 0.
const DATA_STREAM: u64 = 1;

/// Outcome of one training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Index of this iteration, counting from zero.
    pub iteration: u64,
    /// Per-sample negative log-likelihood in nats, Gaussian constant included,
    /// measured before the update.
    pub nll: f64,
    /// Learning rate used for the update.
    pub lr: f64,
    /// The update was skipped because of a non-finite gradient.
    pub skipped: bool,
    /// The plateau rule fired after this iteration.
    pub dropped_lr: bool,
}

/// Single-writer maximum-likelihood trainer over 32-bit parameters.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: WaveGlow<f32>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    iteration: u64,
    lr: f64,
    lr_dropped: bool,
    history: Vec<f64>,
}

/// Windowed plateau test: the mean of the last `window` losses improves on
/// the mean of the `window` before it by less than [`PLATEAU_THRESHOLD`].
pub fn plateaued(history: &[f64], window: usize) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let tail = &history[history.len() - 2 * window..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (prev, cur) = (mean(&tail[..window]), mean(&tail[window..]));
    (prev - cur) < PLATEAU_THRESHOLD * prev.abs()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = WaveGlow::new(config.model_config()?, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DATA_STREAM);
        Ok(Trainer {
            adam: AdamState::new(model.store()),
            lr: config.lr,
            config,
            model,
            rng,
            iteration: 0,
            lr_dropped: false,
            history: Vec::new(),
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let state = ckpt
            .training
            .ok_or_else(|| Error::Format("checkpoint holds no training state".into()))?;
        state.config.validate()?;
        let model = WaveGlow::from_store(ckpt.model, ckpt.params)?;
        state.adam.check(model.store())?;
        Ok(Trainer {
            config: state.config,
            model,
            adam: state.adam,
            rng: state.rng,
            iteration: state.iteration,
            lr: state.lr,
            lr_dropped: state.lr_dropped,
            history: state.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config().clone(),
            params: self.model.store().clone(),
            training: Some(TrainingState {
                config: self.config.clone(),
                iteration: self.iteration,
                lr: self.lr,
                lr_dropped: self.lr_dropped,
                rng: self.rng.clone(),
                adam: self.adam.clone(),
                history: self.history.clone(),
            }),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Change the iteration budget, e.g. when extending a resumed run.
    pub fn set_max_iters(&mut self, max_iters: u64) {
        self.config.max_iters = max_iters;
    }

    pub fn model(&self) -> &WaveGlow<f32> {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn lr_dropped(&self) -> bool {
        self.lr_dropped
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// Sample a batch, evaluate the loss, back-propagate and update.
    ///
    /// A non-finite loss leaves the state untouched and returns an error.
    pub fn step(&mut self, dataset: &[AudioClip]) -> Result<StepReport> {
        let mut rng = self.rng.clone();
        let batch = sample_clips(dataset, &self.config, &mut rng)?;
        let bound = self.model.store().bind();
        let audio = Var::constant(batch.audio);
        let mel = Var::constant(batch.mel);
        let (loss, nll) = match self.model.forward_graph(&bound, &audio, &mel) {
            Ok(trace) => {
                let loss = trace.nll(self.config.sigma)?;
                let sigma = self.config.sigma;
                let nll = f64::from(loss.value().item()) + 0.5 * (2.0 * PI * sigma * sigma).ln();
                (Some(loss), nll)
            }
            Err(Error::NonFinite { .. }) => (None, f64::NAN),
            Err(e) => return Err(e),
        };
        let Some(loss) = loss.filter(|_| nll.is_finite()) else {
            return Err(Error::Diverged { iteration: self.iteration, checkpoint: String::new() });
        };
        self.rng = rng;

        loss.backward()?;
        let grads = bound.grads();
        let lr = self.lr;
        let skipped = match adam_step(self.model.store_mut(), &grads, &mut self.adam, lr) {
            Ok(()) => false,
            Err(Error::NonFiniteGradient { param }) => {
                log::warn!("iteration {}: non-finite gradient for {param}, update skipped", self.iteration);
                true
            }
            Err(e) => return Err(e),
        };

        self.history.push(nll);
        let window = self.config.plateau_window;
        if self.history.len() > 2 * window {
            self.history.drain(..self.history.len() - 2 * window);
        }
        let dropped_lr = !self.lr_dropped && plateaued(&self.history, window);
        if dropped_lr {
            self.lr_dropped = true;
            self.lr = self.config.lr_drop;
            log::info!("iteration {}: loss plateaued, learning rate now {}", self.iteration, self.lr);
        }
        let report = StepReport { iteration: self.iteration, nll, lr, skipped, dropped_lr };
        self.iteration += 1;
        Ok(report)
    }

    /// Train until `max_iters` iterations are complete.
    ///
    /// With an output directory, checkpoints are written at the start, every
    /// `checkpoint_every` iterations and at the end, and a non-finite loss
    /// saves an emergency checkpoint before halting. One tab-separated
    /// `iter nll lr seconds` line per iteration goes to `metrics`.
    pub fn run(
        &mut self,
        dataset: &[AudioClip],
        out_dir: Option<&Path>,
        metrics: &mut dyn Write,
    ) -> Result<Vec<StepReport>> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
            self.save_numbered(dir)?;
        }
        let start = Instant::now();
        let mut reports = Vec::new();
        while self.iteration < self.config.max_iters {
            let report = match self.step(dataset) {
                Ok(r) => r,
                Err(Error::Diverged { iteration, .. }) => {
                    let checkpoint = match out_dir {
                        Some(dir) => {
                            let path = dir.join(format!("emergency-{iteration:06}.ckpt"));
                            self.checkpoint().save(&path)?;
                            path.display().to_string()
                        }
                        None => "nowhere (no output directory)".into(),
                    };
                    return Err(Error::Diverged { iteration, checkpoint });
                }
                Err(e) => return Err(e),
            };
            writeln!(
                metrics,
                "{}\t{:.6}\t{:e}\t{:.3}",
                report.iteration,
                report.nll,
                report.lr,
                start.elapsed().as_secs_f64()
            )?;
            reports.push(report);
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if (every > 0 && self.iteration % every == 0) || self.iteration == self.config.max_iters {
                    self.save_numbered(dir)?;
                }
            }
        }
        metrics.flush()?;
        Ok(reports)
    }

    fn save_numbered(&self, dir: &Path) -> Result<PathBuf> {
        let path = checkpoint_path(dir, self.iteration);
        self.checkpoint().save(&path)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// File name of the regular checkpoint after `iteration` iterations.
pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt-{iteration:06}.ckpt"))
}

/// Train a fresh model on `dataset` according to `cfg`.
pub fn train_loop(
    cfg: &TrainConfig,
    dataset: &[AudioClip],
    out_dir: Option<&Path>,
    metrics: &mut dyn Write,
) -> Result<(Trainer, Vec<StepReport>)> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let reports = trainer.run(dataset, out_dir, metrics)?;
    Ok((trainer, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_needs_two_full_windows() {
        assert!(!plateaued(&[1.0; 7], 4));
        assert!(plateaued(&[1.0; 8], 4));
        assert!(!plateaued(&[1.0; 8], 0));
    }

    #[test]
    fn plateau_threshold_is_relative() {
        let improving = [2.0, 2.0, 1.99, 1.99];
        assert!(!plateaued(&improving, 2));
        let stalled = [2.0, 2.0, 1.9999, 1.9999];
        assert!(plateaued(&stalled, 2));
        let negative = [-1.0, -1.0, -1.002, -1.002];
        assert!(!plateaued(&negative, 2));
    }
}
