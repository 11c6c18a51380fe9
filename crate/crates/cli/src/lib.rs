//! Command implementations behind the `rlstage` binary, exposed as a
//! library so integration tests can drive them directly.

pub mod commands;
pub mod file_config;

pub use commands::{run_command, Cli, Command, CommonArgs};
pub use file_config::FileConfig;
