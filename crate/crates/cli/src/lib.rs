//! Command-line front end: CSV ingestion, TOML run configurations, and JSON
//! and CSV reports for the functional two-sample tests.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod report;

pub use commands::{run, Cli};
