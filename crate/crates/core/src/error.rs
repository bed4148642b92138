use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the samplers and their supporting linear algebra.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("starting point violates wall {wall} (slack {slack:e})")]
    InfeasibleStart { wall: usize, slack: f64 },

    #[error("level overlap at t = 0: row {lower} (level {level}) is not below row {upper}")]
    LevelOverlap {
        level: usize,
        lower: usize,
        upper: usize,
    },

    #[error("rows {lower} and {upper} follow identical trajectories across adjacent levels")]
    CoincidentCurves { lower: usize, upper: usize },

    #[error("trajectory exceeded {max_bounces} bounces after travelling {elapsed:.6} of {travel_time:.6}")]
    TooManyBounces {
        max_bounces: usize,
        elapsed: f64,
        travel_time: f64,
    },

    #[error("rank constraint violated in column {column}: row {lower} >= row {upper}")]
    ConstraintViolation {
        column: usize,
        lower: usize,
        upper: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
