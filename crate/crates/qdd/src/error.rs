//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QddError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("field must be strictly positive: {0}")]
    NonPositiveField(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("eigensolver failed to converge for {size}x{size} matrix")]
    Eigensolver { size: usize },

    #[error("spectral decomposition failed contract check: {0}")]
    SpectralContract(String),

    #[error("{what} did not converge in {iters} iterations (residual {residual:.3e}); {hint}")]
    MaxIterations {
        what: String,
        iters: usize,
        residual: f64,
        hint: String,
    },

    #[error("mass mismatch: {0}")]
    MassMismatch(String),

    #[error("operation requires the Poisson-off setting: {0}")]
    PoissonOn(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
