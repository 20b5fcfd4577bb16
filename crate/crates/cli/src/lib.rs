//! Command-line front end: config documents, subcommands and file output.

pub mod app;
pub mod config;
pub mod error;

pub use app::{run, Manifest, Outcome};
pub use config::{emit_config, parse_config, Document};
pub use error::CliError;
