use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    Shape(String),
    /// A NaN or infinite value was produced or consumed.
    NonFinite(String),
    /// A caller violated an operation precondition.
    Contract(String),
    /// Inconsistent model or training configuration.
    Config(String),
    /// Class counts that make class weights undefined.
    InvalidCounts(String),
    /// Not enough groups of some class to fill every fold.
    InfeasibleStratification(String),
    /// Too few observations for a statistic.
    InsufficientData(String),
    /// Dataset construction failed (unknown class, no samples, ...).
    Dataset(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::NonFinite(m) => write!(f, "numeric error: {m}"),
            Error::Contract(m) => write!(f, "contract violation: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::InvalidCounts(m) => write!(f, "invalid class counts: {m}"),
            Error::InfeasibleStratification(m) => write!(f, "infeasible stratification: {m}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Error::Dataset(m) => write!(f, "dataset error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
