use thiserror::Error;

/// Errors raised across the matching toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("invalid shape: n1={n1}, n2={n2} (need 1 <= n1 <= n2)")]
    InvalidShape { n1: usize, n2: usize },

    #[error("invalid tensor entry {indices:?}: {reason}")]
    InvalidEntry { indices: [usize; 3], reason: &'static str },

    #[error("materialization threshold exceeded: n={n} > {limit}")]
    ThresholdExceeded { n: usize, limit: usize },

    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("zero vector where a nonzero vector is required")]
    ZeroVector,

    #[error("degenerate triangle ({0}, {1}, {2})")]
    DegenerateTriangle(usize, usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("solver trace violates monotonic ascent: {0}")]
    TraceViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
