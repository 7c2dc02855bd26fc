//! Experiment driver: configuration, seeded pipelines and digested outputs.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod seeds;

pub use config::{parse_config, ExperimentConfig, Overrides};
pub use error::CliError;
pub use output::{manifest_digests, RunRecord, MANIFEST, REPORT};
pub use run::{run, Subcommand};
