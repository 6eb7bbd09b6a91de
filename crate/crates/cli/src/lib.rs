//! Batch driver for the farfield enhancement chain: single-stage commands, a
//! config-driven pipeline and config validation.

pub mod config;
pub mod pipeline;

use thiserror::Error;

pub use config::{validate_config, Diagnostic, MaskSource, PipelineConfig, Stage};
pub use pipeline::{run_pipeline, BatchOptions, UtteranceReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config has {} problem(s)", .0.len())]
    Invalid(Vec<Diagnostic>),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] farfield::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for processing failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) | CliError::Usage(_) => 2,
            CliError::Core(farfield::Error::InvalidConfig(_)) => 2,
            CliError::Input(_) | CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}
