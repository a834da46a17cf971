//! Library side of the `auxmix` command: configuration, data ingestion and
//! the `fit`, `compare` and `diagnose` pipelines.

pub mod config;
pub mod data;
pub mod error;
pub mod run;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
