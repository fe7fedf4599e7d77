//! Command implementations behind the `ftspe` binary.

pub mod commands;
pub mod config;
mod plot;

use thiserror::Error;

/// Failure classes, each with a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A semantic check ran and failed.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Input(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}
