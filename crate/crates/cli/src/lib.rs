//! Benchmark harness around `uqbench_core`: dataset ingestion, experiment
//! configuration with named presets, run orchestration, and result
//! persistence for the `uqbench` binary.

pub mod config;
pub mod data;
pub mod error;
pub mod runner;

pub use error::{CliError, Result};
