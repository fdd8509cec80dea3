use alloc::string::String;

/// Errors raised by the estimation, calibration and evaluation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid_arg;
