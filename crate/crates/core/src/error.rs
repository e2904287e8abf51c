use thiserror::Error;

/// Errors produced by the variational engines and their building blocks.
#[derive(Debug, Error)]
pub enum VbError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every mixture component fell below the survival threshold.
    #[error("model collapse: all components pruned")]
    ModelCollapse,

    #[error("free energy decreased by {drop:.6e} at iteration {iteration} (tolerance {tolerance:.6e})")]
    NonMonotonic {
        iteration: usize,
        drop: f64,
        tolerance: f64,
    },

    #[error("no convergence after {iterations} iterations: {detail}")]
    NonConvergence { iterations: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VbError>;

impl VbError {
    /// True for errors caused by bad inputs rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            VbError::Domain(_)
                | VbError::DimensionMismatch(_)
                | VbError::InvalidParameter(_)
                | VbError::Parse(_)
                | VbError::Io(_)
        )
    }
}
