//! Experiment harness for `prer-core`: TOML configs, dataset specs, per-run
//! JSON records, resumable checkpoints and the summary table.

pub mod aggregate;
pub mod config;
pub mod dataset;
pub mod error;
pub mod inspect;
pub mod record;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use record::RunRecord;
