use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the navigation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("query ({x1}, {x2}) lies outside the grid hull")]
    OutOfHull { x1: f64, x2: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("grid lattice {nx}x{ny} is too small, bicubic needs at least 4x4")]
    TooSmallLattice { nx: usize, ny: usize },

    #[error("invalid terrain parameters: {0}")]
    InvalidTerrain(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    FactorizationFailure { min_eigenvalue: f64 },

    #[error("observation variance must be positive, got {0}")]
    NonPositiveObservationVariance(f64),

    #[error("all particle likelihoods vanished")]
    DegenerateWeights,

    #[error("bad particle count: requested {requested} of {available}")]
    BadCount { requested: usize, available: usize },

    #[error("initial covariance is singular")]
    SingularP0,

    #[error("process noise covariance is singular")]
    SingularProcessNoise,

    #[error("inner information matrix is ill-conditioned (condition {condition:e})")]
    SingularInner { condition: f64 },

    #[error("Fisher information trace must be positive, got {0}")]
    NonPositiveTrace(f64),

    #[error("Kalman oracle requires a plane terrain map")]
    NonPlaneMap,

    #[error("control sequence has {got} steps, expected {expected}")]
    HorizonMismatch { expected: usize, got: usize },

    #[error("campaign excluded {excluded} of {runs} runs")]
    TooManyExclusions { excluded: usize, runs: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
