//! Experiment runner behind the `qrisk` command: configs, protocols, run
//! records and artifact output.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod experiments;
pub mod record;
pub mod stats;

pub use artifacts::{execute, RunOptions};
pub use config::{ExperimentConfig, ExperimentName};
pub use error::RunError;
pub use experiments::{run_experiment, Summary};
pub use record::{summarize, RunRecord};
