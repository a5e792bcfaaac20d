use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("CFL violation: dt = {dt:.3e} exceeds the admissible {dt_max:.3e}; reduce dt")]
    Cfl { dt: f64, dt_max: f64 },

    #[error(
        "signal fell to {value:.3e} at cell ({i}, {j}), below the floor {floor:.3e}; \
         the singular sensitivity degenerates here, use the log formulation"
    )]
    SignalFloor {
        i: usize,
        j: usize,
        value: f64,
        floor: f64,
    },

    #[error("nonpositive signal {value:.3e} at cell ({i}, {j})")]
    NonPositiveSignal { i: usize, j: usize, value: f64 },

    #[error("negative density {value:.3e} at cell ({i}, {j})")]
    NegativeDensity { i: usize, j: usize, value: f64 },

    #[error("all trial fields were degenerate")]
    Degenerate,

    /// A scenario-level check (not an audit column) failed.
    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 validation, 2 runtime or solver failure,
    /// 3 failed scenario assertion.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GridMismatch(_) | Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Assertion(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
