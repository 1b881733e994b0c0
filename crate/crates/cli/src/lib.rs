//! Command-line front end: configuration layering and subcommands.

pub mod commands;
pub mod config;
