use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong between reading a matrix and writing a report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected \"MAT1\", found {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("truncated matrix file {path}: expected {expected} payload bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("matrix in {path} declares a zero dimension ({rows}x{cols})")]
    ZeroDimension { path: PathBuf, rows: u32, cols: u32 },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("{what}: manifest declares {expected_rows}x{expected_cols}, file holds {rows}x{cols}")]
    ShapeMismatch {
        what: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{what} has {rows} rows but the dataset has m = {m}")]
    RowMismatch { what: String, rows: usize, m: usize },

    #[error("outcome at row {row} is {value}, expected 0 or 1")]
    NonBinaryOutcome { row: usize, value: f64 },

    #[error("duplicate unit name {0:?}")]
    DuplicateUnit(String),

    #[error("dataset has no units")]
    NoUnits,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("topic {topic} has {count} members, at least 2 are required")]
    SparseTopic { topic: usize, count: usize },

    #[error("self pair ({0}, {0}) is not a valid AIE term")]
    SelfPair(usize),

    #[error("unit index {index} out of range for {count} units")]
    UnitOutOfRange { index: usize, count: usize },

    #[error("unknown unit {0:?}")]
    UnknownUnit(String),

    #[error("entropy balancing diverged at iteration {iteration}: objective = {value}")]
    Diverged { iteration: usize, value: f64 },

    #[error("report is empty")]
    EmptyReport,

    #[error("mode mismatch across reports: {0}")]
    ModeMismatch(String),

    #[error("unit {unit}: {source}")]
    InUnit {
        unit: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Diverged { .. } => true,
            Error::InUnit { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
