use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("linear algebra failure: {0}")]
    LinAlg(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("parse error in {0}: {1}")]
    Parse(String, String),
}

pub type Result<T> = std::result::Result<T, Error>;
