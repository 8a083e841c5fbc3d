use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: expected {expected} cells, found {found}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: label {label:?} is not one of the declared class labels")]
    Label { row: usize, label: String },

    #[error("record {record} has no class label")]
    Unlabeled { record: usize },

    #[error("invalid cleaning policy: {0}")]
    Policy(String),

    #[error("cleaning removed every {0}")]
    EmptyAfterCleaning(&'static str),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("attribute {attribute:?} record {record}: unexpected missing value")]
    MissingValue { attribute: String, record: usize },

    #[error("correlation between {a:?} and {b:?}: {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<Error>,
    },

    #[error("not a permutation: {0}")]
    Permutation(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("invalid synthetic dataset spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
