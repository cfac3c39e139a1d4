use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the decoding engine and its analysis tooling.
#[derive(Debug, Error)]
pub enum MoiError {
    #[error("invalid vocabulary size {0}: at least 2 tokens are required")]
    InvalidVocabulary(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("token id {index} out of range for vocabulary of size {len}")]
    Index { index: usize, len: usize },

    #[error("context capacity {capacity} exceeded (requested {requested} positions)")]
    Capacity { capacity: usize, requested: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("shape mismatch for tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MoiError> = std::result::Result<T, E>;

impl MoiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MoiError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        MoiError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
