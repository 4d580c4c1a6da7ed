//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter combination is valid mathematically but not supported
    /// by the requested code path.
    #[error("unsupported parameters: {0}")]
    Unsupported(String),

    /// Cholesky factorization failed; `order` is the first leading
    /// principal minor that is not positive definite.
    #[error("matrix not positive definite (leading minor of order {order})")]
    NotSpd { order: usize },

    /// Numerical failure inside a sampler or evaluator. When raised from a
    /// chain, `iteration` carries the sweep index.
    #[error("numeric failure{}: {message}", iteration.map(|i| format!(" at iteration {i}")).unwrap_or_default())]
    Numeric {
        message: String,
        iteration: Option<usize>,
    },

    /// Adaptive quadrature could not meet its tolerance; carries the
    /// residual error estimate.
    #[error("quadrature did not converge (residual estimate {residual:.3e})")]
    Quadrature { residual: f64 },

    /// Model/dataset validation failed; every violation is listed.
    #[error("validation failed: {}", violations.join("; "))]
    Validation { violations: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
            iteration: None,
        }
    }

    /// Attach an iteration index to a numeric error bubbling out of a sweep.
    pub fn at_iteration(self, iter: usize) -> Self {
        match self {
            Error::Numeric { message, .. } => Error::Numeric {
                message,
                iteration: Some(iter),
            },
            other => Error::Numeric {
                message: other.to_string(),
                iteration: Some(iter),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
