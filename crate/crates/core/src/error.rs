use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid segment: split {k} is not before time {t}")]
    InvalidSegment { k: usize, t: usize },

    #[error("position {0} is outside the recorded prefix")]
    OutOfRange(usize),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("all hypothesis weights are degenerate")]
    DegenerateWeights,

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("engine already consumed {0} observations")]
    PastHorizon(usize),

    #[error("positional encoding is ambiguous at position {0}")]
    AmbiguousPosition(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
