//! Command-line driver for the diverse trajectory forecasting experiments.
//!
//! Every subcommand reads an [`ExperimentConfig`] and works inside its output
//! directory: `gen-data` writes the splits, `train` fits one stage, `evaluate`
//! scores methods on the test split and `export-plots` writes plotting tables.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod methods;

pub use cli::run;
pub use config::{ExperimentConfig, Layout, Regime};
pub use error::CliError;
pub use methods::{Method, Stage};
