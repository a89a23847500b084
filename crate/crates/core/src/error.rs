use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A direct factorization failed or produced an unacceptable backward
    /// error. Carries a human-readable conditioning diagnostic.
    #[error("linear solver failure in {context}: {diagnostic}")]
    LinearSolverFailure { context: String, diagnostic: String },

    /// An outer (sequential) iteration did not reach its tolerance within
    /// the configured iteration budget.
    #[error(
        "no convergence at step {step}: {iterations} outer iterations, residual ratio {residual_ratio:.3e}"
    )]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual_ratio: f64,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Case-file parsing or validation failure, with key context.
    #[error("case file error ({context}): {message}")]
    Parse { context: String, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
