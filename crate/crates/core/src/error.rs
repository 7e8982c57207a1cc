use thiserror::Error;

/// Errors produced by the solver and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid polyhedron: {0}")]
    InvalidPolyhedron(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// The point is outside the domain of an estimator (x not in Ω or μ < 0).
    #[error("outside estimator domain: {0}")]
    Domain(String),

    /// The polyhedron (or a subproblem's feasible set) is empty.
    #[error("feasible set is empty")]
    Infeasible,

    #[error("subsolver failed to converge (residual {residual:e})")]
    SubsolverFailure { residual: f64 },

    #[error("non-finite value produced by {0}")]
    Evaluation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("enumeration bound exceeded: {0}")]
    BoundExceeded(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
