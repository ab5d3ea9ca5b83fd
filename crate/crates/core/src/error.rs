//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum McvqaError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("finite-difference probe error: {0}")]
    Probe(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("checkpoint compatibility error: {0}")]
    Compatibility(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, McvqaError>;
