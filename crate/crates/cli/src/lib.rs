//! Command-line front end and HTTP service for the `glyphgen` library.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod service;

pub use args::Cli;
pub use error::{CliError, Result};
