use thiserror::Error;

/// Errors raised by problems, solvers and data handling.
#[derive(Debug, Error)]
pub enum WccError {
    /// A point lies outside the domain an operation needs (e.g. a boundary simplex point).
    #[error("domain error: {0}")]
    Domain(String),

    /// An argument violates a precondition (non-positive step, mismatched lengths, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The problem, schedule, or configuration cannot be combined as requested.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterate stopped being finite.
    #[error("numeric failure in {stage} at iteration {iteration}: {detail}")]
    Numeric {
        stage: &'static str,
        iteration: usize,
        detail: String,
    },

    /// An iterative oracle hit its iteration cap before meeting its tolerance.
    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = WccError> = std::result::Result<T, E>;

pub(crate) fn argument(msg: impl Into<String>) -> WccError {
    WccError::Argument(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> WccError {
    WccError::Config(msg.into())
}
