use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
    #[error("{k} mixing components exceed the enumeration cap of {cap}")]
    EnumerationCap { k: usize, cap: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("observation covariance is singular even after regularization")]
    SingularCovariance,
    #[error("non-finite values at iteration {iteration}")]
    NonFinite { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
