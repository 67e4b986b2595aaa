//! Command-line harness: configuration layering, reproducible experiment
//! runs and write-once output directories with manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod manifest;

pub use config::{ExperimentConfig, Overrides};
pub use error::CliError;
