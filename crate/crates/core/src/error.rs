use thiserror::Error;

/// Errors raised by the solvers, preconditioners and GP routines.
///
/// Non-convergence of an iterative solve is *not* an error: it is reported
/// through the `converged` flag of a [`crate::solvers::SolveReport`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown hyperparameter index {0}")]
    UnknownParameter(usize),

    #[error("invalid rank {rank} for n = {n}")]
    InvalidRank { rank: usize, n: usize },

    #[error("invalid regularization offset {0}; it must be positive")]
    InvalidDelta(f64),

    #[error("invalid block size {0}")]
    InvalidBlockSize(usize),

    #[error("inner factorization of the low-rank system failed")]
    InnerFactorizationFailure,

    #[error("factorization of diagonal block {0} failed")]
    BlockFactorizationFailure(usize),

    #[error("interpolation grid with {0} nodes is too large")]
    GridTooLarge(usize),

    #[error("preconditioner failed: {0}")]
    PreconditionerFailure(String),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid kernel specification: {0}")]
    InvalidSpec(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumericCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
