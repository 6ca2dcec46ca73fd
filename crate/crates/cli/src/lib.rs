//! Configuration and commands behind the `duallearn` binary.

pub mod commands;
pub mod config;
