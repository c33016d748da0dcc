use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("invalid coefficient field: {0}")]
    InvalidCoefficient(String),

    #[error("inclusions {first} and {second} overlap at fine cell ({cell_x}, {cell_y})")]
    OverlappingInclusions {
        first: usize,
        second: usize,
        cell_x: usize,
        cell_y: usize,
    },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value {value} at ({x}, {y})")]
    NonFinite { x: f64, y: f64, value: f64 },

    #[error("matrix is not positive definite: pivot {pivot:e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid solver configuration: {0}")]
    InvalidSolverConfig(String),

    #[error("wavelet level {level} not aligned with {segments} edge segments (maximal admissible level is {max_level})")]
    WaveletAlignment {
        level: u32,
        segments: usize,
        max_level: u32,
    },

    #[error("multiscale space is empty: all columns were dropped")]
    EmptySpace,

    #[error("rank-deficient projection: pivot {pivot:e} at column {column}")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fine propagation on interval {interval} failed: {source}")]
    IntervalFailed {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.into(),
        }
    }
}
