//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants carry enough context to diagnose a failure
/// without re-running the computation.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or integer argument is outside its domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Matrix or vector shapes do not line up for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    /// More components were requested than the data supports.
    #[error("rank deficiency: requested {requested} components but effective rank is {effective}")]
    RankDeficiency { requested: usize, effective: usize },

    /// A linear-algebra routine failed or produced out-of-contract values.
    #[error("numerical failure in {0}")]
    Numerical(String),

    /// A signal is too short for the requested processing step.
    #[error("record too short: {len} samples, need at least {min} ({context})")]
    ShortRecord {
        len: usize,
        min: usize,
        context: String,
    },

    /// Too few detected heartbeats to cut interior beats.
    #[error("insufficient peaks: found {found}, need at least 3")]
    InsufficientPeaks { found: usize },

    /// A file did not parse as the expected format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// An experiment configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A stored model container is from an unsupported format version.
    #[error("unsupported container version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.into(),
            found: found.into(),
        }
    }
}
