use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("position sampling failed after {attempts} attempts (n={n}, w={w})")]
    SamplingFailure { attempts: u64, n: usize, w: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("ensemble aborted: {0}")]
    Ensemble(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
