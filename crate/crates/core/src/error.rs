use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, schemes or hyperparameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated file {path}: expected {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("checksum mismatch in {path}: header {expected:016x}, content {actual:016x}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("cannot synthesize class {class}: attribute {attribute} has no vectors on the required side")]
    Synthesis { attribute: usize, class: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error: 1 usage, 2 I/O, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Synthesis { .. } => 1,
            Error::Io { .. }
            | Error::MalformedHeader { .. }
            | Error::Truncated { .. }
            | Error::ChecksumMismatch { .. }
            | Error::Parse { .. } => 2,
            Error::Numeric(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    /// Tag the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
