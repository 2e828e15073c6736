//! Crate-wide error type.
//!
//! The variant determines the CLI exit code, so callers can distinguish
//! bad configuration from bad input data from internal contract breaches.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or usage: bad flag value, missing guide,
    /// out-of-range hyperparameter.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is malformed or incomplete (bad JSONL line, missing
    /// precomputed embedding, unknown label).
    #[error("data error: {0}")]
    Data(String),

    /// A caller violated an API precondition (shape mismatch, masked
    /// softmax target, step out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Filesystem failure, tagged with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code for this error class: usage/config 2, data 3,
    /// contract 4, io 5. Success is 0.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Contract(_) => 4,
            Error::Io { .. } => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
