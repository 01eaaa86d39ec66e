//! The invertible network: squeeze, invertible 1x1 convolutions, affine
//! couplings with early outputs, and the exact log-likelihood.

mod config;
mod coupling;
mod invconv;
mod model;
mod squeeze;

pub use config::{ModelConfig, WnShape};
pub use coupling::Coupling;
pub use invconv::InvConv;
pub use model::{negative_log_likelihood, FlowOutput, FlowStep, FlowTrace, Nll, WaveGlow};
pub use squeeze::{squeeze, unsqueeze};
