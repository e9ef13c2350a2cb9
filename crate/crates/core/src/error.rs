//! Error type shared across the crate.

/// Unified error for environment construction, data handling, training and
/// verification routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An operation required full support (or matching support) and the
    /// input violated that, e.g. tilting a policy with a zero entry.
    #[error("support violation: {0}")]
    Support(String),

    /// A tilting weight came out non-finite; reported instead of silently
    /// propagating NaN/inf into the optimizer.
    #[error("non-finite weight {value} for example {index}")]
    NonFiniteWeight { index: usize, value: f64 },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A data file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Metrics were requested over an empty (fully filtered) test set.
    #[error("test set is empty after filtering; nothing to evaluate")]
    EmptyTestSet,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn support(msg: impl Into<String>) -> Self {
        Error::Support(msg.into())
    }
}
