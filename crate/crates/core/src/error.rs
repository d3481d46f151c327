use alloc::string::String;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("subject {row}: field `{field}`: {message}")]
    Record {
        row: usize,
        field: String,
        message: String,
    },
    #[error("life table has no entry for attained age {age_year} with keys {keys:?}")]
    LifeTableDomain {
        age_year: i64,
        keys: alloc::vec::Vec<i64>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("subject {0}: event observed with zero total hazard")]
    ZeroHazardEvent(usize),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
