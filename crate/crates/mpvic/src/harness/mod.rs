//! Experiment runner: one JSON config describes a run, one manifest records
//! what it produced. Five modes share the plumbing: explore collects data and
//! trains, train refits from a saved dataset, eval runs planner episodes on a
//! task, sweep crosses cost-weight settings, oracle-check compares the planner
//! against the constant-stiffness grid.

pub mod config;
pub mod manifest;
pub mod runner;
pub mod summary;

pub use config::{CliOverrides, ExperimentConfig, Mode};
pub use manifest::RunManifest;
pub use runner::{cli_run, run_summarize, RunOutcome};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum HarnessError {
    /// Rejected before anything ran; exit 2.
    #[error("configuration: {0}")]
    Config(String),
    /// Failed mid-run; exit 3.
    #[error("{0}")]
    Runtime(String),
    /// The planner missed the grid-search optimum by more than the allowed
    /// margin; exit 4. The report is still written.
    #[error("planner exceeded oracle tolerance: worst ratio {worst} with tolerance {tolerance}")]
    OracleMismatch { worst: f64, tolerance: f64 },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
            HarnessError::OracleMismatch { .. } => 4,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(format!("io: {e}"))
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Runtime(format!("csv: {e}"))
    }
}

impl From<crate::dynamics::DynamicsError> for HarnessError {
    fn from(e: crate::dynamics::DynamicsError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::penn::ModelError> for HarnessError {
    fn from(e: crate::penn::ModelError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::penn::TrainError> for HarnessError {
    fn from(e: crate::penn::TrainError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::mpc::MpcError> for HarnessError {
    fn from(e: crate::mpc::MpcError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::episode::LogError> for HarnessError {
    fn from(e: crate::episode::LogError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<crate::penn::DatasetError> for HarnessError {
    fn from(e: crate::penn::DatasetError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}
