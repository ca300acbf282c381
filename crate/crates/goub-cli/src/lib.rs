//! Batch front end: run configuration, toy tasks, the bridge zoo, and the
//! command implementations behind the binary.

pub mod bridges;
pub mod commands;
pub mod config;
pub mod task;
