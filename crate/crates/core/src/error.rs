use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input, bad configuration, or a violated precondition.
    Validation,
    /// Filesystem failure.
    Io,
    /// Something that should be impossible given validated inputs.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a feature file")]
    NotFeatureFile,

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt record: {0}")]
    CorruptRecord(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("size mismatch: expected {expected} values, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("split: {0}")]
    Split(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("missing feature file for utterance {utterance}: {path}")]
    MissingFeature { utterance: String, path: PathBuf },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty sweep")]
    EmptySweep,

    #[error("invariant breached: {0}")]
    Invariant(String),
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
            Error::Io { .. } | Error::MissingFeature { .. } => ErrorKind::Io,
            Error::Invariant(_) => ErrorKind::Internal,
            _ => ErrorKind::Validation,
        }
    }
}
