use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A scalar argument or configuration value is out of its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation was called in the wrong lifecycle state (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// A numerical invariant was violated.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed binary input. `offset` is the byte position where parsing stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
