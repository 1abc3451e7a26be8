use thiserror::Error;

/// Errors produced by space construction, samplers, and verifiers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("objects are defined on different spaces")]
    SpaceMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation requires an integer-valued base measure")]
    NonIntegerMeasure,

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("enumeration too large: {size} terms exceed the limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("infeasible conditioning: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
