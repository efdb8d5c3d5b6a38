use std::path::PathBuf;

use thiserror::Error;

/// Failures of the experiment drivers. Each maps to a process exit code via
/// [`LabError::exit_code`].
#[derive(Debug, Error)]
pub enum LabError {
    /// Invalid configuration or arguments.
    #[error("invalid configuration: {0}")]
    Validation(String),

    /// An input file could not be parsed.
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// A model or data file parsed but describes an invalid object.
    #[error("{}: {source}", path.display())]
    InvalidInput {
        path: PathBuf,
        source: efvae::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    /// A numerical routine failed while running an experiment.
    #[error(transparent)]
    Model(#[from] efvae::Error),

    /// An experiment ran but did not finish (for example, divergence).
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl LabError {
    /// 1 for validation and parse errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Validation(_) | LabError::Parse { .. } | LabError::InvalidInput { .. } => 1,
            LabError::Io { .. } | LabError::Model(_) | LabError::Runtime(_) => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;
