use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("hypercomplex dimension n={n} does not divide {what}={value}")]
    Divisibility {
        n: usize,
        what: &'static str,
        value: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("batch_norm in training mode needs more than one value per channel (got batch {batch}, length {len})")]
    DegenerateBatch { batch: usize, len: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal too short: {what} needs at least {needed} samples, got {got}")]
    TooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error in trial {trial}: {detail}")]
    Integrity { trial: String, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by malformed data on disk or in memory, as opposed
    /// to configuration or programming errors.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Integrity { .. }
                | Error::Io { .. }
                | Error::Json(_)
                | Error::InvalidInput(_)
                | Error::TooShort { .. }
                | Error::Label { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
