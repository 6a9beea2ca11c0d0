//! File formats, run configuration and batch commands around `stmark-core`.

pub mod catalog;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, run_from_file};
pub use config::{Command, RunConfig};
pub use error::{CliError, CliResult};
