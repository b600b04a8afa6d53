use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Oracle,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: vector has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate sample id {id}")]
    DuplicateId { line: usize, id: usize },
    #[error("line {line}: labeled sample {id} has no label")]
    MissingLabel { line: usize, id: usize },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorCategory::Config,
            Error::Malformed { .. }
            | Error::DimensionMismatch { .. }
            | Error::DuplicateId { .. }
            | Error::MissingLabel { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorCategory::Data,
            Error::Oracle(_) => ErrorCategory::Oracle,
            Error::Numeric(_) => ErrorCategory::Numeric,
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
