//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum EmsError {
    /// Tensor or graph construction/evaluation failed (shape mismatches,
    /// missing inputs, evaluation order violations, ...).
    #[error("graph error: {0}")]
    Graph(String),

    /// A numeric routine produced or received invalid values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid parameters, configuration values or function preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dataset loading/validation failed.
    #[error("data error: {0}")]
    Data(String),

    /// Environment misuse (stepping a finished episode, out-of-range episode
    /// index, ...).
    #[error("environment error: {0}")]
    Env(String),

    /// Training diverged (non-finite loss or parameters).
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Checkpoint serialization/deserialization failed.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmsError>;

impl EmsError {
    pub fn graph(msg: impl Into<String>) -> Self {
        EmsError::Graph(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        EmsError::Numeric(msg.into())
    }
    pub fn invalid(msg: impl Into<String>) -> Self {
        EmsError::InvalidInput(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        EmsError::Data(msg.into())
    }
    pub fn env(msg: impl Into<String>) -> Self {
        EmsError::Env(msg.into())
    }
    pub fn diverged(msg: impl Into<String>) -> Self {
        EmsError::Diverged(msg.into())
    }
    pub fn checkpoint(msg: impl Into<String>) -> Self {
        EmsError::Checkpoint(msg.into())
    }
}
