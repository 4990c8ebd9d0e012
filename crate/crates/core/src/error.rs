use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("element index {index} out of range (mesh has {count} elements)")]
    ElementOutOfRange { index: usize, count: usize },

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {last_residual:.3e})")]
    NewtonDiverged {
        iterations: usize,
        last_residual: f64,
        history: Vec<f64>,
        last_iterate: Vec<num_complex::Complex64>,
    },

    #[error("time level {level}: {inner}")]
    AtLevel { level: usize, inner: Box<Error> },

    #[error("grid point {label}: {inner}")]
    AtGridPoint { label: String, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Strips level/grid-point annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { inner, .. } | Error::AtGridPoint { inner, .. } => inner.root(),
            other => other,
        }
    }

    pub fn is_solver_failure(&self) -> bool {
        matches!(self.root(), Error::LinearSolveFailed(_) | Error::NewtonDiverged { .. })
    }
}
