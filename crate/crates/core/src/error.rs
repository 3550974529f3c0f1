use std::io;

use thiserror::Error;

/// Errors produced by the index, training and I/O layers.
#[derive(Debug, Error)]
pub enum GarlicError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDivergence { epoch: usize, detail: String },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error on line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("index is empty")]
    EmptyIndex,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl GarlicError {
    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            GarlicError::InvalidParameter(_) => "invalid_parameter",
            GarlicError::DimensionMismatch { .. } => "dimension_mismatch",
            GarlicError::InvalidInput(_) => "invalid_input",
            GarlicError::TrainingDivergence { .. } => "training_divergence",
            GarlicError::Format { .. } => "format",
            GarlicError::Config { .. } => "config",
            GarlicError::EmptyIndex => "empty_index",
            GarlicError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, GarlicError>;
