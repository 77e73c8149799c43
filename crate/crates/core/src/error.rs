use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate 6D rotation (zero or parallel columns)")]
    DegenerateRotation,

    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("invalid model config: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("simulation diverged: {0}")]
    Diverged(String),

    #[error("quadratic program: {0}")]
    Qp(String),

    #[error("estimator state used before initialization")]
    UninitializedState,

    #[error("weight file: {0}")]
    Weights(String),

    #[error("calibration unstable: {0}")]
    CalibrationUnstable(String),

    #[error("sequence too short: need at least {needed} frames, got {actual}")]
    TooShort { needed: usize, actual: usize },

    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sequence file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
