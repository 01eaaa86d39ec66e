//! Flow-based vocoder: an invertible network mapping audio to Gaussian
//! noise conditioned on mel-spectrograms, trained by exact maximum
//! likelihood and sampled by running the network backwards.

pub mod error;
pub mod flow;
pub mod infer;
pub mod params;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod wn;

pub use error::{Error, Result};
