use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid bids: {0}")]
    InvalidBids(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// A ratio over efficient welfare was requested where that welfare is zero.
    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
