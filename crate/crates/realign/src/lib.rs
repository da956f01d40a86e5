//! File formats and pipeline stages around `realign-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

pub use error::{CliError, Result};
