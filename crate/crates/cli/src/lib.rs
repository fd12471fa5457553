//! Command-line experiment runner for the `mamp` library: configuration
//! files, experiment drivers and their CSV/JSON outputs.

pub mod config;
pub mod output;
pub mod run;

pub use config::{validate_config, Diagnostic, ExperimentConfig, Kind};
pub use run::{compute, run_experiment, RunError};
