//! Command-line front end: configuration, subcommands and figure output.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use config::StudyConfig;
pub use error::CliError;
