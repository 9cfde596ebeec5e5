//! Pipelines behind the `rigidkit` command line: input loading, the
//! egomotion → cost maps → segmentation chain, per-segment rigid fitting and
//! scoring, plus the JSON/CSV reports they emit.

pub mod pipeline;
pub mod report;

use std::fmt;

/// Failure of a command, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input, configuration or arguments (exit 2).
    Input(String),
    /// A computation stage failed (exit 1).
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn input(msg: impl fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn stage(stage: &'static str, err: impl fmt::Display) -> Self {
        CliError::Stage { stage, message: err.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Stage { stage, message } => write!(f, "{stage} failed: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
