//! Batch experiment runner: strict JSON configs in, plot-ready CSV and JSON
//! summaries out.

pub mod cache;
pub mod config;
pub mod error;
pub mod run;

pub use cache::OracleCache;
pub use config::{parse_config, parse_config_str, ExperimentConfig};
pub use error::CliError;
pub use run::{compile_hardware, config_hash, run_dir, run_experiment, RunOutcome};
