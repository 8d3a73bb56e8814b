//! Scenario runner and report emitter for the homogenization laboratory.

pub mod config;
pub mod report;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(_) => 2,
            CliError::Config(_) | CliError::Schema(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<homog_core::homog_lab::LabError> for CliError {
    fn from(e: homog_core::homog_lab::LabError) -> Self {
        CliError::Solver(e.to_string())
    }
}
