//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A measure failed validation (weights, support, normalization).
    #[error("invalid measure: {0}")]
    Measure(String),

    /// The subordination fixed-point iteration did not reach its tolerance.
    #[error("fixed-point iteration stalled: residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    /// Adaptive quadrature could not certify the requested tolerance.
    #[error("quadrature error estimate {estimate:e} exceeds tolerance {tol:e}")]
    Quadrature { estimate: f64, tol: f64 },

    /// A numeric diagnostic failed (oscillating ladder, NaN, ...).
    #[error("numeric diagnostic: {0}")]
    Numeric(String),

    /// A rank decision fell inside the indeterminate band.
    #[error("rank indeterminate: {0}")]
    IndeterminateRank(String),

    #[error("linear algebra backend: {0}")]
    Linalg(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
