//! Experiment harness for the NOMA freshness scheduler: configuration,
//! run directories, the `aoisched` commands and every file they write.

pub mod attention;
pub mod checks;
pub mod commands;
pub mod config;
pub mod plots;
pub mod records;
pub mod run_dir;

use std::path::{Path, PathBuf};

pub use config::{load_config, ExperimentConfig, PolicyName};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: malformed file: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        source: aoi_autograd::checkpoint::CheckpointError,
    },

    #[error("{0} check(s) failed")]
    ChecksFailed(usize),

    #[error(transparent)]
    Core(#[from] aoi_core::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, detail: impl Into<String>) -> Self {
        HarnessError::Format {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(aoi_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
