//! Experiment runner for `ge-remote`: config parsing, one function per
//! subcommand, provenance-stamped output files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{ExperimentConfig, Overrides};
pub use error::{exit_code, CliError};
