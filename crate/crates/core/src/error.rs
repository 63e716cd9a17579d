use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("outside the log chart: |I - U| = {distance:.6} >= r0 = {radius}")]
    ChartViolation { distance: f64, radius: f64 },

    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("edge {0} is a fixed boundary edge")]
    FixedEdge(usize),

    #[error("unsupported topology: {0}")]
    Topology(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("problem too large: {size} > {limit} ({what})")]
    TooLarge { what: &'static str, size: usize, limit: usize },

    #[error("test form support is not covered by the lattice: {0}")]
    SupportNotCovered(String),

    #[error("empty event: no sample satisfies the predicate")]
    EmptyEvent,

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}
