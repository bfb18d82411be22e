//! Error type shared across the crate, with the CLI exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad command line or configuration key supplied by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// I/O failure on a named path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file or config value that could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Input data violating a documented invariant.
    #[error("invalid data: {0}")]
    Validation(String),

    /// Tensor/vector dimensions that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A metric or projection that is undefined for the given inputs.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Internal failure while running an experiment.
    #[error("runtime failure: {0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 0 success, 1 usage, 2 data error, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Parse(_) | Error::Validation(_) => 2,
            Error::Shape(_) | Error::Eval(_) | Error::Runtime(_) => 3,
        }
    }
}
