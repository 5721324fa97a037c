//! Experiment driver behind the `aelab` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig, Loaded};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for anything the user can fix in the invocation or config, 1 for
    /// failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 1,
        }
    }
}
