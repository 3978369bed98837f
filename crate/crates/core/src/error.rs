use alloc::string::String;
use core::fmt;

/// Error kinds shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid data: empty audio, negative magnitudes, indices out of range.
    Input(String),
    /// Invalid configuration or parameters.
    Config(String),
    /// Matrix dimensions do not chain.
    Shape(String),
    /// A NaN or infinity appeared where a finite value is required.
    Numeric(String),
    /// A script was replayed against a model it was not recorded for.
    Provenance(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Provenance(msg) => write!(f, "provenance error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
