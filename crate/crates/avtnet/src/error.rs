//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AvtError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unknown variant '{0}', valid variants: {1}")]
    UnknownVariant(String, String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("array io error: {0}")]
    Npy(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, AvtError>;

impl AvtError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AvtError::InvalidInput(msg.into())
    }

    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        AvtError::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
