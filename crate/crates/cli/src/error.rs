use std::path::{Path, PathBuf};

use thiserror::Error;
use workstat::ErrorClass;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] workstat::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Input {
        path: String,
        source: workstat::Error,
    },

    #[error("configuration: {0}")]
    Config(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Attaches the file name to errors raised while reading `path`.
    pub fn input(path: &Path, source: workstat::Error) -> Self {
        match source {
            workstat::Error::Io(e) => CliError::io(path, e),
            other => CliError::Input {
                path: path.display().to_string(),
                source: other,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        let class = match self {
            CliError::Core(e) | CliError::Input { source: e, .. } => e.class(),
            CliError::Io { .. } => ErrorClass::Io,
            CliError::Config(_) => ErrorClass::Validation,
        };
        match class {
            ErrorClass::Validation => EXIT_VALIDATION,
            ErrorClass::Numerical => EXIT_NUMERICAL,
            ErrorClass::Io => EXIT_IO,
        }
    }
}
