//! Batch front end for `posmod`: problem files, subcommands and exit codes.

pub mod args;
pub mod commands;
pub mod problem;

pub use commands::{CliError, Exit, Outcome};
pub use problem::{ProblemError, ProblemFile};
