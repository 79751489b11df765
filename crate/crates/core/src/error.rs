use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh parameters: {0}")]
    InvalidGrid(String),

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid coefficient field: {0}")]
    InvalidField(String),

    #[error("matrix is numerically singular (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("matrix is not positive definite at row {0}")]
    NotPositiveDefinite(usize),

    #[error("local patch matrix for coarse node {node} is singular or indefinite")]
    SingularPatch { node: usize },

    #[error("preconditioner is not positive definite (r'Sr = {0:e})")]
    IndefinitePreconditioner(f64),

    #[error("solver did not converge in {steps} steps (relative residual {relative_residual:e})")]
    NotConverged {
        steps: usize,
        relative_residual: f64,
        history: Vec<f64>,
    },

    #[error("Lanczos extremes did not settle: Ritz values moved {drift:.3e} in the last quarter")]
    LanczosNotConverged { drift: f64 },

    #[error("reference solution has zero norm")]
    ZeroReference,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that stem from an iterative or direct solve rather
    /// than bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::LanczosNotConverged { .. }
                | Error::Singular { .. }
                | Error::SingularPatch { .. }
                | Error::NotPositiveDefinite(_)
                | Error::IndefinitePreconditioner(_)
        )
    }
}
