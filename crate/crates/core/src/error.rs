use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),

    #[error("SVD failed to converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("empty matrix or vector input")]
    EmptyInput,

    #[error("direct channel of user {user} is rank deficient (singular value {index} is zero)")]
    DegenerateChannel { user: usize, index: usize },

    #[error("degenerate channel draws exhausted {attempts} retries")]
    RetryExhausted { attempts: usize },

    #[error("weight vector must be strictly positive (entry {index} is {value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spectral radius did not converge within {iterations} iterations (gap {gap:e})")]
    SpectralNoConvergence { iterations: usize, gap: f64 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid sweep spec: {0}")]
    InvalidSweep(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
