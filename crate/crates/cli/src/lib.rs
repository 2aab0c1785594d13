//! Experiment runner for the `pmcmc` library: data generation, chains,
//! sweeps, comparisons and particle-count tuning, driven by TOML configs.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod runner;

pub use error::{CliError, CliResult};
