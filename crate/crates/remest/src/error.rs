//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model, schedule, or argument failed validation.
    #[error("validation: {0}")]
    Validation(String),

    /// An iterative method ran out of iterations.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// Adaptive quadrature could not meet its tolerance; carries the partial value.
    #[error("quadrature did not converge (partial value {partial:.6e})")]
    QuadratureNonConvergence { partial: f64 },

    /// An innovation covariance that should be positive definite was not.
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    /// P_pred - P_post was indefinite beyond tolerance.
    #[error("covariance difference is indefinite (min eigenvalue {min_eig:.3e})")]
    IndefiniteDifference { min_eig: f64 },

    /// The CDF ratio denominator underflowed; carries a log-domain estimate.
    #[error("cdf ratio denominator underflow (log-domain value {log_value:.3})")]
    RatioUnderflow { log_value: f64 },

    /// Rejection sampling accepted too few samples to be usable.
    #[error("rejection acceptance rate {rate:.3e} too low; rescale thresholds")]
    AcceptanceTooLow { rate: f64 },

    /// Transmission payload inconsistent with the decision bit.
    #[error("payload must be present iff gamma = 1")]
    PayloadMismatch,

    /// An optimal policy failed the single-threshold-per-elapsed-time property.
    #[error("policy degeneracy violation: {0}")]
    DegeneracyViolation(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
