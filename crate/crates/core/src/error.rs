use thiserror::Error;

use crate::tensor::{LoadError, TensorError};

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for input-validation failures as opposed to runtime ones.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Json(_) | Error::Csv(_) | Error::Load(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
