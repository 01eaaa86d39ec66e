//! Maximum-likelihood training: configuration, random clip sampling, Adam,
//! the plateau learning-rate rule and resumable checkpoints.

mod adam;
mod checkpoint;
mod config;
mod data;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, TrainingState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{TrainConfig, CONFIG_KEYS};
pub use data::{load_dataset, sample_clips, Batch};
pub use trainer::{checkpoint_path, plateaued, train_loop, StepReport, Trainer, PLATEAU_THRESHOLD};
