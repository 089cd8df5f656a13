//! Command-line front end of `depgem`: configuration, subcommands and error
//! mapping. The binary in `main.rs` is a thin argument parser over this.

pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, Result};
