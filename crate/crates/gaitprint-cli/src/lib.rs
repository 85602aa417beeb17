//! Library side of the command line frontend: configuration loading and the
//! subcommand bodies, exposed so integration tests can drive the exact code
//! the binary runs without spawning processes.

pub mod commands;
pub mod config;
