//! Command-line front end: run configuration files, training and evaluation
//! runs, multi-seed sweeps, and static SVG plots of run metrics.

use thiserror::Error;

pub mod config;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::{ConfigError, FlatConfig};

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unreadable configuration (exit code 1).
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    /// Anything that goes wrong after the configuration was accepted (exit code 2).
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
