//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any viewsynth operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file content, with the byte offset where parsing stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Well-formed input carrying unusable values (NaN/Inf, out of range).
    #[error("data error: {0}")]
    Data(String),

    /// A documented precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Input shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// An iterative optimization produced a non-finite loss.
    #[error("optimization diverged at step {step}: loss is not finite")]
    Diverged { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
