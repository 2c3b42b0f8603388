use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("unknown gait `{name}` (valid gaits: {valid})")]
    UnknownGait { name: String, valid: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("cost of transport undefined: no forward displacement")]
    ZeroDisplacement,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("policy checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("journal corrupted at line {line}: {reason}")]
    JournalCorrupt { line: usize, reason: String },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("optimizer aborted: {0}")]
    OptimizerAborted(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure classes, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::UnknownGait { .. }
            | Error::InvalidConfig(_)
            | Error::OutOfRange(_)
            | Error::MissingCheckpoint(_)
            | Error::VersionMismatch { .. }
            | Error::Parse(_) => ErrorCategory::Config,
            Error::ZeroDisplacement
            | Error::InsufficientData(_)
            | Error::JournalCorrupt { .. } => ErrorCategory::Data,
            Error::Divergence(_) | Error::OptimizerAborted(_) => ErrorCategory::Numerical,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 3,
            ErrorCategory::Data => 4,
            ErrorCategory::Numerical => 5,
            ErrorCategory::Io => 6,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                k => Error::Parse(format!("{k:?}")),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}
