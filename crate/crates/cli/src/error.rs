use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flag or config value, caught before any run starts.
    #[error("{field}: {message}")]
    Config { field: &'static str, message: String },

    #[error("config file {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] toa_lab_core::Error),
}

impl CliError {
    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        CliError::Config {
            field,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything rejected up front, 1 for failures during a run.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::ConfigFile { .. } => 2,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
