use std::fmt;

use crate::feature_store::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload at byte offset {offset}: expected {expected}")]
    Truncated { offset: u64, expected: &'static str },

    #[error("unsupported container version {found} (max supported {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("validation failed: {}", ViolationList(.0))]
    Validation(Vec<Violation>),

    #[error("capacity error: requested {requested} {what} but only {available} available")]
    Capacity {
        what: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("configuration error in `{parameter}`: {message}")]
    Config { parameter: String, message: String },

    #[error("degenerate vector: cosine similarity undefined for zero-norm input")]
    DegenerateVector,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

impl Error {
    pub fn config(parameter: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            parameter: parameter.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (parameters or files) rather
    /// than runtime failures.
    pub fn is_usage_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
