use thiserror::Error;

/// Errors raised by the lattice, operator, norm and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice of dimension {dim} and depth {depth} has {leaves} leaves, capacity is {capacity}")]
    Capacity {
        dim: usize,
        depth: usize,
        leaves: u128,
        capacity: usize,
    },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("exponent {0} is outside the open interval (1, inf)")]
    Exponent(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("leaf {index}: {reason}")]
    InvalidLeaf { index: usize, reason: String },
    #[error("length mismatch: expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("objects live on different lattices")]
    LatticeMismatch,
    #[error("capacity exceeded: {0}")]
    TooLarge(String),
    #[error("schema error in field `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
