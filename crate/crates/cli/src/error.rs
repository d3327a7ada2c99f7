use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] lsta_core::Error),

    #[error("invalid value for `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("{path}:{line}: {message}")]
    ConfigSyntax { path: PathBuf, line: usize, message: String },

    #[error("training diverged: non-finite loss at step {step} (epoch {epoch})")]
    NonFiniteLoss { step: usize, epoch: usize },

    #[error("{what} mismatch: checkpoint has {checkpoint}, dataset has {dataset}")]
    DimMismatch {
        what: &'static str,
        checkpoint: usize,
        dataset: usize,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("metrics line {line}: {message}")]
    Metrics { line: u64, message: String },

    #[error("missing data file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub(crate) fn config(field: &str, message: impl ToString) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::UnknownKey(_) | CliError::ConfigSyntax { .. } => 2,
            _ => 1,
        }
    }
}
