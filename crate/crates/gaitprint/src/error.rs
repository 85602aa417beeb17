//! Crate-wide error type. Variants carry enough context to name the offending
//! subject, column, or file in user-facing messages.

use thiserror::Error;

/// Coarse classification used by callers that map failures to process exit
/// codes: configuration problems, data problems, numerical problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error("missing column '{column}' in {path}")]
    MissingColumn { column: String, path: String },

    #[error("duplicate sample for subject '{subject}' at t={t}")]
    DuplicateSample { subject: String, t: i64 },

    #[error("subject '{subject}': {message}")]
    Subject { subject: String, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("lag u={u} out of range 1..={max} for frame length {s}")]
    LagOutOfRange { u: u16, max: u16, s: usize },

    #[error("lag u={u} not present in lag map")]
    LagNotPresent { u: u16 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("response is single-class (all {class}); one-vs-rest needs both classes")]
    SingleClass { class: u8 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

impl Error {
    /// Exit-code classification. I/o and parse failures on data files count
    /// as data errors; everything the user could fix by editing the run
    /// configuration counts as config.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::LagOutOfRange { .. } => ErrorCategory::Config,
            Error::Numerical(_) | Error::SingleClass { .. } => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
