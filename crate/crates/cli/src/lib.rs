//! Experiment commands behind the `floss` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod plot;
pub mod report;

use std::process::ExitCode;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] floss_core::Error),

    #[error("cannot write output: {0}")]
    Output(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 2 for user or data errors, 3 for broken internal invariants.
    pub fn exit_code(&self) -> ExitCode {
        let internal = match self {
            CliError::Core(e) => !e.is_data_error(),
            CliError::Internal(_) => true,
            CliError::Config(_) | CliError::Output(_) => false,
        };
        ExitCode::from(if internal { 3 } else { 2 })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
