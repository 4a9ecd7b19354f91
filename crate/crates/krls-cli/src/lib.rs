//! Library surface of the command-line harness, split out so integration
//! tests can drive the commands directly.

pub mod commands;
pub mod config;
pub mod dataset;
