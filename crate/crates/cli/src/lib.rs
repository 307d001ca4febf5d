//! Command-line front-end: argument parsing, run configuration and the
//! `simulate`, `analyze`, `bench`, `export` and `fixtures` commands.

pub mod args;
pub mod commands;
pub mod config;

pub use commands::{exit_code, run};
pub use config::{Command, RunConfig};
