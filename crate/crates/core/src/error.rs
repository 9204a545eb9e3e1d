//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("network spec error: {0}")]
    Spec(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("batch error: {0}")]
    Batch(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI. 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::Io(_) => 3,
            Error::Parse { .. } | Error::Schema(_) | Error::Codec(_) => 4,
            _ => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! err_fmt {
    ($variant:ident, $($arg:tt)*) => {
        $crate::error::Error::$variant(format!($($arg)*))
    };
}
pub(crate) use err_fmt;
