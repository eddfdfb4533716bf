use thiserror::Error;

use crate::battery::BatteryState;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical blowup: integration produced a non-finite state {state:?}")]
    NumericalBlowup { state: BatteryState },

    #[error("estimator degenerate: {0}")]
    EstimatorDegenerate(String),

    #[error("polytope is empty")]
    EmptySet,

    #[error("over-tightened: constraint row {row} has offset {offset:.6e} after tightening by {margin:.6e}")]
    OverTightened { row: usize, offset: f64, margin: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rank deficient map: {0}")]
    RankDeficient(String),

    #[error("matrix is not Schur-stable (spectral radius {0:.6})")]
    NotSchurStable(f64),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("synthesis failure: {0}")]
    Synthesis(String),

    #[error("dynamic programming: {0}")]
    Dp(String),

    #[error("controller fault: {0}")]
    ControllerFault(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
