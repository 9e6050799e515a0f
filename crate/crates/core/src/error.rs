use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("mass {0} outside [0, 1]")]
    MassOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "box length {box_length} too small for horizon t_end = {t_end}; minimal admissible box length is {required}"
    )]
    BoxTooSmall {
        box_length: f64,
        t_end: f64,
        required: f64,
    },

    #[error("numerical failure at t = {t}: max |w| = {max_abs}")]
    NumericalFailure { t: f64, max_abs: f64 },

    #[error("vector-field word of order {0} requested; at most 2 is supported")]
    OrderTooHigh(usize),

    #[error("snapshot buffer: {0}")]
    Buffer(String),

    #[error("hyperboloid s = {s} needs snapshots over [{needed_from}, {needed_to}], buffer covers [{have_from}, {have_to}]")]
    SectionNotCovered {
        s: f64,
        needed_from: f64,
        needed_to: f64,
        have_from: f64,
        have_to: f64,
    },

    #[error("fit rejected: {0}")]
    Fit(String),

    #[error("state metadata mismatch: {0}")]
    Metadata(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("snapshot parse error at byte offset {offset}: {message}")]
    SnapshotFormat { offset: usize, message: String },

    #[error("runs are not comparable: {0}")]
    Incomparable(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the numerics rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFailure { .. })
    }
}
