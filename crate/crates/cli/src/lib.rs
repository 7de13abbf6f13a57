//! Experiment recipes behind the `fintact` binary.

pub mod commands;
pub mod config;
pub mod svg;

use fintact_core::Error;

/// Failure of a command, carrying its exit-code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed for {0} case(s)")]
    GradCheck(usize),
}

impl CliError {
    /// 2 for configuration problems, 3 for data problems, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(Error::Config(_) | Error::InvalidArgument(_)) => 2,
            CliError::Core(Error::Diverged(_)) => 4,
            CliError::Core(_) => 3,
            CliError::GradCheck(_) => 1,
        }
    }
}
