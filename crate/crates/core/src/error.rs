use thiserror::Error;

/// Errors raised by the model, the pivots and the simulation harness.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("parameter outside the model domain: {0}")]
    Domain(String),

    /// Fit stopped at the iteration cap; `psi` and `loglik` describe the best iterate.
    #[error("optimizer did not converge at psi = {psi} after {iterations} iterations (best loglik {loglik})")]
    NotConverged {
        psi: f64,
        iterations: usize,
        loglik: f64,
    },

    #[error("constrained fit for channel {channel} hit the boundary exp(lambda1) = -psi at psi = {psi}")]
    ConstraintBoundary { channel: usize, psi: f64 },

    /// A constrained fit beat the global fit by more than tolerance.
    #[error("profile log likelihood at psi = {psi} exceeds the global maximum by {excess:e}")]
    OptimizerFailure { psi: f64, excess: f64 },

    /// Quantities needed for the higher-order correction are not computable.
    #[error("boundary case: {0}")]
    Boundary(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no sign change for the root in [{lower}, {upper}]")]
    Bracket { lower: f64, upper: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
