use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit category used by the command line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 1,
    Data = 2,
    Training = 3,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {kind}")]
    Parse { line: u64, kind: ParseError },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("feature {column} has negative value {value}; chi-square needs non-negative features")]
    NegativeFeature { column: usize, value: f64 },

    #[error("training set contains a single class")]
    SingleClass,

    #[error("class {label} has {count} record(s); stratified split needs at least 2")]
    ClassTooSmall { label: u8, count: usize },

    #[error("timestamp {0} is outside the representable calendar range")]
    TimestampOutOfRange(i64),

    #[error("{0}")]
    EmptyInput(&'static str),

    #[error("{model}: training diverged ({detail})")]
    Divergence { model: String, detail: String },

    #[error("stale artifact {path}: built for config {found}, current config is {expected}")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: unsupported artifact version {found}")]
    ArtifactVersion { path: PathBuf, found: u32 },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("one or more models failed to train: {0}")]
    TrainingFailed(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Config(_) => ExitClass::Usage,
            Error::SingleClass | Error::Divergence { .. } | Error::TrainingFailed(_) => ExitClass::Training,
            _ => ExitClass::Data,
        }
    }
}
