use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Provider,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("bad date: {0:?}")]
    BadDate(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation in {file} at row {row}: {message}")]
    Schema {
        file: String,
        row: usize,
        message: String,
    },

    #[error("dangling reference: {kind} {id:?} does not exist")]
    DanglingReference { kind: &'static str, id: String },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("corrupted file {}: {message}", path.display())]
    Corrupted { path: PathBuf, message: String },

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("empty text")]
    EmptyText,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("degenerate embedding: zero-norm vector")]
    DegenerateEmbedding,

    #[error("provider {provider} changed embedding dimension from {expected} to {actual}")]
    DimensionDrift {
        provider: String,
        expected: usize,
        actual: usize,
    },

    #[error("provider error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Provider {
        status: Option<u16>,
        message: String,
    },

    #[error("provider timed out: {0}")]
    Timeout(String),

    #[error("rate limit exhausted after {attempts} attempts")]
    RateLimited { attempts: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("signature generation failed for question {question_id:?}: {failed} of {total} cells failed")]
    GenerationFailed {
        question_id: String,
        failed: usize,
        total: usize,
    },

    #[error("missing signatures for questions: {}", .0.join(", "))]
    MissingSignatures(Vec<String>),

    #[error("undetermined detector output for response {0:?} (strict mode)")]
    Undetermined(String),

    #[error("no score or verdict dumps found under {}", .0.display())]
    NoDumps(PathBuf),

    #[error("output directory is in use by another run (lock file {}); remove it if that run is gone", .0.display())]
    Locked(PathBuf),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Provider { .. }
            | Error::Timeout(_)
            | Error::RateLimited { .. }
            | Error::GenerationFailed { .. } => ErrorKind::Provider,
            Error::Config(_)
            | Error::Locked(_)
            | Error::DimensionDrift { .. }
            | Error::InvalidArgument(_) => {
                ErrorKind::Config
            }
            _ => ErrorKind::Data,
        }
    }

    /// Whether a retry has a chance of succeeding.
    pub fn is_transient(&self) -> bool {
        match self {
            Error::Timeout(_) | Error::RateLimited { .. } => true,
            Error::Provider { status, .. } => match status {
                None => true,
                Some(s) => *s == 429 || *s >= 500,
            },
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
