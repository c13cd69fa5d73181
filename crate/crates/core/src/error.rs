use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SpiError>;

#[derive(Debug, Error)]
pub enum SpiError {
    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("no convergence after {iterations} iterations (score norm {score_norm:e})")]
    NoConvergence { iterations: usize, score_norm: f64 },

    #[error("information matrix is singular after jitter escalation")]
    SingularInformation,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("budget is infeasible: every eligible sigma is zero")]
    BudgetInfeasible,

    #[error("invalid surrogate schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl SpiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpiError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        SpiError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Errors that a repetition-level retry may recover from by redrawing data.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            SpiError::NoConvergence { .. }
                | SpiError::SingularInformation
                | SpiError::NotPositiveDefinite { .. }
                | SpiError::BudgetInfeasible
        )
    }
}
