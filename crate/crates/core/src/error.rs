use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Feeder data violates a structural or physical invariant.
    #[error("invalid feeder: {0}")]
    Validation(String),

    #[error("invalid per-unit base: {0}")]
    Base(String),

    #[error("invalid agent data: {0}")]
    Agent(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid attack: {0}")]
    Attack(String),

    /// Inconsistent internal state while assembling the conic program.
    #[error("problem assembly: {0}")]
    Assembly(String),

    #[error("solver: {0}")]
    Solver(String),

    #[error("settlement: {0}")]
    Settlement(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            source,
        }
    }
}
