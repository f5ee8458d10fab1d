//! File formats, configuration, experiment runner and reporting for the
//! disentanglement framework in `detangle-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod report;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{CliError, ExitCode};
