//! Experiment harness for `remer-core`: config files, multi-seed runs,
//! metrics CSVs with manifests, debug dumps and canned reproductions.

pub mod config;
pub mod dump;
pub mod error;
pub mod metrics;
pub mod repro;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
