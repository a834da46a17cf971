use thiserror::Error;

use crate::mixture::FitFailure;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a documented precondition (sorted inputs, matching dimensions, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Linear algebra or likelihood evaluation failed even after regularization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("mixture fit did not converge: {0}")]
    Fit(Box<FitFailure>),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("cache file error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
