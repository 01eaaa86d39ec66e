use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("singular matrix: |det| = {det:e} is at or below {threshold:e}")]
    Singular { det: f64, threshold: f64 },

    #[error("non-finite values in {what} at flow {flow}")]
    NonFinite { what: &'static str, flow: usize },

    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged at iteration {iteration}: non-finite loss; state saved to {checkpoint}")]
    Diverged { iteration: u64, checkpoint: String },

    #[error("degenerate weight-norm direction: ||v|| = {norm:e} for output channel {channel}")]
    DegenerateDirection { norm: f64, channel: usize },

    #[error("mel covers too few frames: need {needed}, have {available}")]
    Coverage { needed: usize, available: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Attach a file path to an error raised while handling that file.
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File { path: path.into(), source: Box::new(self) }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
