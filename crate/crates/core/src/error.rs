use std::path::PathBuf;

use thiserror::Error;

use crate::lqr::SteadyStateFailure;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("plant generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("invalid channel: {0}")]
    Channel(String),

    #[error("Markov chain has no unique stationary distribution: {0}")]
    NotErgodic(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no steady-state Riccati solution: {0}")]
    NoSteadyState(SteadyStateFailure),

    #[error("controller unavailable: no steady-state gain has been computed")]
    ControllerUnavailable,

    #[error("replay buffer not ready: holds {len} transitions, needs {needed}")]
    NotReady { len: usize, needed: usize },

    #[error("training fault: {0}")]
    TrainingFault(String),

    #[error("refusing to enumerate {count} joint actions (cap {cap})")]
    EnumerationCap { count: u128, cap: u128 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {}: {source}", path.display())]
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

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
