use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("invalid configuration field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("configuration parse error: {0}")]
    ConfigParse(String),

    #[error("non-finite state in slice {slice} after step {step}")]
    BlowUp { slice: usize, step: usize },

    #[error("Gram matrix for output dimension {dim} not factorizable after jitter escalation")]
    IllConditioned { dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("archive {path}: {message}")]
    Archive { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
