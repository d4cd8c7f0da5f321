//! Experiment runner behind the `ntklab` binary.

pub mod commands;
pub mod config;
pub mod output;
