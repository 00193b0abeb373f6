use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation, calibration and provenance layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A zero pivot was hit while factorizing a linear system.
    #[error("singular system at row {row}")]
    Singular { row: usize },

    /// Time integration could not proceed even at the minimum step.
    #[error("integration failed at t = {time:.6e} s (T = {temperature:.3} K): {reason}")]
    Integration {
        time: f64,
        temperature: f64,
        reason: String,
    },

    /// Every objective evaluation returned the failure sentinel.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
