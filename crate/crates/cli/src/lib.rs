//! Command-line front end: experiment configs, runs, sweeps and golden checks.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_run, cmd_sweep, cmd_verify_golden, execute, Artifacts, RunSummary, SweepRow};
pub use config::{ExperimentConfig, Pattern};
pub use error::CliError;
