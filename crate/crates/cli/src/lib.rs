//! Command-line orchestration of the classification pipeline: run
//! configuration, run-directory I/O and the subcommands.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod rundir;

pub use commands::{run, Command, Common};
pub use config::{DatasetMode, RunConfig};
