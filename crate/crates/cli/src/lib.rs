//! Experiment runner for the K-way energy probe study: condition presets,
//! run orchestration, CSV/JSON artifacts and the cross-run gap summary.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod summary;

pub use config::{Condition, DataSource, ExperimentConfig, Overrides, Scale};
pub use error::{CliError, Result};
pub use runner::{run, RunOutcome};
