//! Command-line front end for `csalign`: divergences on files, the property
//! suite, synthetic training, the strategy ablation and the circular vs
//! pairwise benchmark.
//!
//! Exit codes: 0 success, 1 property failure, 2 parse or config error,
//! 3 validation error, 4 non-finite training loss.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod report;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
