//! Configuration, experiment orchestration, run manifests and plots for the
//! `bdsde` command line tool.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod plots;

pub use config::ExperimentConfig;
pub use error::HarnessError;
pub use experiments::{rerun, run};
pub use manifest::RunManifest;
