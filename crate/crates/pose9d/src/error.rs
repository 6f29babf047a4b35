//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Raw head output too ill-conditioned to orthonormalize.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("depth must be strictly positive, got {0}")]
    NonPositiveDepth(f64),

    /// A cuboid corner sits at or behind the camera plane.
    #[error("cuboid corner behind camera (z = {0})")]
    BehindCamera(f64),

    /// Projection falls entirely outside the image frame.
    #[error("projection lies outside the image frame")]
    OutOfFrame,

    #[error("infeasible cost matrix: {0}")]
    InfeasibleMatrix(String),

    #[error("brute-force assignment supports at most {max} columns, got {got}")]
    TooLarge { got: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no matched pairs to aggregate a loss over")]
    EmptyAssignment,

    /// Malformed record: missing field, wrong type, unparseable line.
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    /// Well-formed record that violates a domain invariant.
    #[error("invariant violation ({context}): {message}")]
    Invariant { context: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invariant(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
