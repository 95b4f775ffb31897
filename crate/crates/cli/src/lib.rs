//! Library side of the `l3sma` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use config::{ConfigArgs, RunConfig};
pub use error::CliError;
