//! Configuration, presets and commands behind the `hddp` binary.

pub mod commands;
pub mod config;
pub mod presets;
