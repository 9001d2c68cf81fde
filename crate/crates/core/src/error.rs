use thiserror::Error;

/// Errors surfaced by grid construction, weight assembly, and solvers.
#[derive(Debug, Error)]
pub enum WelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure in {context}: relative residual {residual:.3e} after {iterations} iterations")]
    SolverFailure {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WelError>;

pub(crate) fn invalid(msg: impl Into<String>) -> WelError {
    WelError::InvalidArgument(msg.into())
}
