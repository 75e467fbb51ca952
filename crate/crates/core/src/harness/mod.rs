//! Configuration, serialised outputs, single-sampler commands and the
//! headline experiments behind the `lfs` command-line tool.

pub mod config;
pub mod experiments;
pub mod output;
pub mod runs;

use crate::error::LfsError;

pub use config::RunConfig;
pub use output::Artifacts;

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    StatisticalFailure = 1,
    ConfigError = 2,
    BudgetExhausted = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn of_error(e: &LfsError) -> Self {
        match e {
            LfsError::BudgetExhausted { .. } => Self::BudgetExhausted,
            LfsError::WeightCollapse { .. } => Self::StatisticalFailure,
            LfsError::Config(_)
            | LfsError::Domain { .. }
            | LfsError::Capability { .. }
            | LfsError::Io(_) => Self::ConfigError,
        }
    }
}
