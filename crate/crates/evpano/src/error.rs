//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Configuration problems: unknown keys, malformed values, inconsistent
    /// or out-of-range settings. Maps to exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Data problems: unreadable or malformed input files, values violating
    /// format contracts. Maps to exit code 3.
    #[error("data error in {path}: {message}")]
    Data { path: PathBuf, message: String },

    /// Numerical failures inside the optimizer or a linear solve. Maps to
    /// exit code 4.
    #[error("solver error: {0}")]
    Solver(String),

    /// Simulation time step too coarse for the integrate-and-fire model:
    /// the log-intensity change at one pixel over one step reached a
    /// quarter of the contrast threshold.
    #[error(
        "aliasing: log-intensity step {delta:.6} >= C/4 at pixel ({x}, {y}), t = {t:.9}; \
         decrease dt_sample"
    )]
    Aliasing { x: u16, y: u16, t: f64, delta: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data { path: path.into(), message: message.into() }
    }

    /// Process exit code for the CLI: 0 success, 2 config, 3 data, 4 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::Io(_) => 3,
            Error::Solver(_) | Error::Aliasing { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
