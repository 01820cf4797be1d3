use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Malformed or unusable input data.
    Data,
    /// A numerical routine could not produce a valid result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("non-monotonic time at row {row}")]
    NonMonotonicTime { row: usize },

    #[error("non-uniform dt at row {row}: spacing {spacing} differs from {dt}")]
    NonUniformDt { row: usize, spacing: f64, dt: f64 },

    #[error("NaN or non-finite field `{field}` at row {row}")]
    NanField { row: usize, field: String },

    #[error("malformed row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },

    #[error("trajectory too short: needs {needed} samples after spawn, has {available}")]
    TrajectoryTooShort { needed: usize, available: usize },

    #[error("trial rejected: outcome is {0}, only landed trials are usable")]
    NotLanded(String),

    #[error("trajectory has no obstacle spawn")]
    MissingSpawn,

    #[error("spawn time {0} does not coincide with a sample timestamp")]
    SpawnNotOnGrid(f64),

    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::NotPositiveDefinite { .. } | Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
