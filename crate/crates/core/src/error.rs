use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero probability at index {index}; logits are undefined there")]
    ZeroProbability { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Undefined(String),

    #[error("training diverged at epoch {epoch} (member {member})")]
    Diverged { epoch: usize, member: usize },

    #[error("wrong IDX magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },

    #[error("truncated IDX data: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("IDX dimensions overflow: {0:?}")]
    DimensionOverflow(Vec<u32>),

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => ErrorClass::Config,
            Error::WrongMagic { .. }
            | Error::Truncated { .. }
            | Error::DimensionOverflow(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Empty(_) => ErrorClass::Data,
            Error::NonFinite(_)
            | Error::LengthMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::ZeroProbability { .. }
            | Error::Undefined(_)
            | Error::Diverged { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
