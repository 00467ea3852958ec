use std::io;

use thiserror::Error;

/// A failed command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum Failure {
    /// A verification or acceptance check did not hold.
    #[error("check failed: {0}")]
    Check(String),
    /// Bad flags or configuration.
    #[error("usage: {0}")]
    Usage(String),
    /// Missing, unreadable or malformed files, or network trouble.
    #[error("i/o: {0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<lmu_core::Error> for Failure {
    fn from(e: lmu_core::Error) -> Self {
        use lmu_core::Error as E;
        match e {
            E::Argument(_) | E::Dimension(_) => Failure::Usage(e.to_string()),
            E::Io(_) | E::Format { .. } | E::Json(_) => Failure::Io(e.to_string()),
            E::State(_) | E::Numerical(_) => Failure::Check(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
