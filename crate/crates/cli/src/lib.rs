//! Command-line surface of the sentinel: argument parsing, config merging,
//! the monitor loop and run reports.
//!
//! Exit codes: 0 when a run finished without an early stop, 10 for metric
//! stagnation, 11 for loss-pathology persistence, 2 for any error.

pub mod args;
pub mod commands;
pub mod digest;
pub mod monitor;
pub mod report;
pub mod settings;

pub use commands::{run, EXIT_ERROR};
pub use report::{exit_code, RunReport};
pub use settings::Settings;
