//! Command-line front end: CSV ingestion, model files, metrics and benchmarks.

pub mod bench;
pub mod commands;
pub mod dataset;
pub mod eda;
pub mod error;
pub mod metrics;
pub mod model;

pub use commands::run;
pub use error::{CliError, CliResult};
