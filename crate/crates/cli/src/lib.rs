//! Configuration, orchestration and file output for the `bbap` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{execute, Command};
pub use config::RunConfig;
pub use error::{CliError, Result};
