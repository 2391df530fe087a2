//! Subcommands of the `gridflow` binary.

pub mod commands;
pub mod ensemble;

use gridflow_core::Error as CoreError;

/// Process exit codes.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(CoreError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => exit_code::INPUT,
            CliError::Solver(_) => exit_code::SOLVER,
            CliError::Infeasible(_) => exit_code::INFEASIBLE,
            CliError::Other(_) => exit_code::OTHER,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NotConverged(m) | CoreError::LinearSolve(m) | CoreError::Domain(m) => CliError::Solver(m),
            CoreError::Optimization(m) => CliError::Other(m),
            e @ CoreError::Io { .. } => CliError::Other(e.to_string()),
            other => CliError::Input(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
