//! Error types shared across the pipeline.

use std::path::PathBuf;

use thiserror::Error;

use crate::grounding::ResponseParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("insufficient data: {context} needs at least {required} samples, got {actual}")]
    InsufficientData {
        context: String,
        required: usize,
        actual: usize,
    },

    #[error("invalid parameter '{name}': {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown column '{0}' (not present in the data file header)")]
    UnknownColumn(String),

    #[error("duplicate column '{0}' in manifest")]
    DuplicateColumn(String),

    #[error("row {row}: cannot parse '{value}' in column '{column}'")]
    UnparseableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: timestamp {timestamp} is not after its predecessor")]
    NonMonotonicTimestamps { row: usize, timestamp: String },

    #[error("row {row}: spacing {actual_secs}s differs from the declared {expected_secs}s")]
    IrregularSpacing {
        row: usize,
        expected_secs: i64,
        actual_secs: i64,
    },

    #[error("split sizes {train}+{validation}+{test} exceed the {rows} available rows")]
    SplitOverflow {
        train: usize,
        validation: usize,
        test: usize,
        rows: usize,
    },

    #[error("exogenous channel '{channel}' has no values for indices {start}..{end} (series length {len})")]
    UnavailableCovariate {
        channel: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("model {model} unavailable: {reason}")]
    ModelUnavailable { model: String, reason: String },

    #[error("feature extraction failed on channel '{channel}': {source}")]
    Channel {
        channel: String,
        #[source]
        source: Box<Error>,
    },

    #[error("case library is stale: {0}")]
    StaleLibrary(String),

    #[error("case library format error at byte offset {offset}: {reason}")]
    LibraryFormat { offset: u64, reason: String },

    #[error("duplicate corpus id '{id}' in {path}")]
    DuplicateId { id: String, path: PathBuf },

    #[error("malformed corpus entry {path}: {reason}")]
    MalformedEntry { path: PathBuf, reason: String },

    #[error("malformed interval in {path}: {reason}")]
    MalformedInterval { path: PathBuf, reason: String },

    #[error("bundle assembly failed in section {section}: {reason}")]
    Assembly {
        section: &'static str,
        reason: String,
    },

    #[error("forecast response: {0}")]
    Response(#[from] ResponseParseError),

    #[error("backend transport failure: {0}")]
    Transport(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn insufficient(context: impl Into<String>, required: usize, actual: usize) -> Self {
        Error::InsufficientData {
            context: context.into(),
            required,
            actual,
        }
    }
}
