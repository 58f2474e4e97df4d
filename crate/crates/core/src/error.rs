use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroNorm { norm: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("resultant vector of {count} samples vanished (norm {norm:e})")]
    DegenerateResultant { count: usize, norm: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("forward cache does not match the network or gradient shape: {0}")]
    StaleCache(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid cluster count k={k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated file ({detail})")]
    TruncatedFile { path: PathBuf, detail: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}: field {field} is not numeric: {value:?}")]
    NonNumericField { line: usize, field: usize, value: String },
    #[error("labels are not dense in [0, {classes}): missing {missing:?}")]
    SparseLabels { classes: usize, missing: Vec<usize> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ZeroNorm { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateResultant { .. } => {
                ErrorKind::Numeric
            }
            Error::InvalidConfig(_) | Error::InvalidK { .. } | Error::Domain(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
            Error::DimensionMismatch { .. }
            | Error::Empty(_)
            | Error::LabelOutOfRange { .. }
            | Error::LengthMismatch { .. }
            | Error::StaleCache(_)
            | Error::InsufficientData(_)
            | Error::BadMagic { .. }
            | Error::TruncatedFile { .. }
            | Error::CountMismatch { .. }
            | Error::RaggedRow { .. }
            | Error::NonNumericField { .. }
            | Error::SparseLabels { .. }
            | Error::Checkpoint(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
