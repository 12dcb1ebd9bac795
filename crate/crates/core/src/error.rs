use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, simulation and I/O.
#[derive(Debug, Error)]
pub enum PemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time step {dt} s is not small relative to the time constant {tau} s")]
    StepTooLarge { dt: f64, tau: f64 },

    #[error("device does not cycle: {0}")]
    NonCycling(String),

    #[error("per-step drift {drift:.5} °F exceeds the bin width {width:.5} °F")]
    DriftExceedsBin { drift: f64, width: f64 },

    #[error("insufficient opt-out depth: {0}")]
    OptOutDepth(String),

    #[error("model invariant violated at step {step}: {detail}")]
    Invariant { step: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed signal: {0}")]
    Signal(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PemError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PemError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate a model-invariant violation rather than bad input.
    pub fn is_runtime_violation(&self) -> bool {
        matches!(self, PemError::Invariant { .. })
    }
}

pub type Result<T> = std::result::Result<T, PemError>;
