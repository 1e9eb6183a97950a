use thiserror::Error;

use crate::numeric::eig::EigError;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("model validation failed: {0}")]
    Validation(String),
    #[error("modelling assumption violated: {0}")]
    Assumption(String),
    #[error(transparent)]
    Eig(#[from] EigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
