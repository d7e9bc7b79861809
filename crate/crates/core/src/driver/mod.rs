//! Configuration, benchmark problems, file outputs and the CLI commands.

pub mod commands;
pub mod config;
pub mod output;
pub mod problems;

pub use commands::{analyze, fdcheck, optimize, verify_column};
pub use config::RunConfig;
pub use problems::{build_problem, Problem};
