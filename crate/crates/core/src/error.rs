//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors produced by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not match what the operation requires.
    #[error("dimension mismatch in {op}: {details}")]
    Dimension { op: &'static str, details: String },

    /// A history append went backwards (or sideways) in time.
    #[error("non-monotone append at t = {t}: last recorded time is {last}")]
    NonMonotoneTime { t: f64, last: f64 },

    /// A history lookup fell outside the recorded time range.
    #[error("query time {t} outside recorded range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    /// A derivative evaluation or state update produced NaN or infinity.
    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { what: &'static str, t: f64 },

    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A configuration file could not be parsed.
    #[error("config parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure while reading a config or writing results.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for shape complaints.
    pub fn dimension(op: &'static str, details: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            details: details.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
