//! Library side of the `qana` tool: configuration, the model file format
//! and the subcommands, usable from tests without spawning the binary.

pub mod commands;
pub mod config;
pub mod model_file;
pub mod report;

pub use config::RunConfig;
