//! Experiment runner for the `wcc-core` solvers: TOML configs in, trace CSV,
//! summary and final iterate out.

pub mod config;
pub mod runner;

pub use config::{ExperimentConfig, Method};
pub use runner::{compare_solvers, run_experiment, run_experiment_in, stationarity_at};

use wcc_core::WccError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// 1 for configuration and input problems, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => 1,
            Self::Numeric(_) => 2,
        }
    }
}

impl From<WccError> for CliError {
    fn from(e: WccError) -> Self {
        match e {
            WccError::Numeric { .. } | WccError::NonConvergence { .. } | WccError::Domain(_) => {
                Self::Numeric(e.to_string())
            }
            WccError::Io(_) => Self::Io(e.to_string()),
            _ => Self::Config(e.to_string()),
        }
    }
}
