//! Command-line front end: configuration loading and the pipeline commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_evaluate, cmd_generate, cmd_report, cmd_train, EvaluateArgs};
pub use config::RunConfig;

use crate::error::Error;

/// Process exit status for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}
