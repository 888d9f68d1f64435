use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid {field}: {message}")]
    Validation { field: &'static str, message: String },

    #[error("blob size mismatch in {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("channel {0} not present")]
    MissingChannel(String),

    #[error("window [{start}, {end}) s lies outside epoch extent [{min}, {max}) s")]
    WindowOutOfRange {
        start: f64,
        end: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid filter band [{low}, {high}] Hz for sampling rate {rate} Hz")]
    InvalidBand { low: f64, high: f64, rate: f64 },

    #[error("unstable filter: pole magnitude {0}")]
    UnstableFilter(f64),

    #[error("unsupported resampling {from} Hz -> {to} Hz: {reason}")]
    Resample { from: f64, to: f64, reason: String },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("class {0} has no examples")]
    EmptyClass(String),

    #[error("at least two classes required, found {0}")]
    TooFewClasses(usize),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unknown dataset {0}")]
    UnknownDataset(String),

    #[error("no data for dataset {dataset} under {root}")]
    MissingData { dataset: String, root: PathBuf },

    #[error("checksum mismatch for {0}")]
    Checksum(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::Validation {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
