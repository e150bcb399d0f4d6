//! Command-line front end for `kplab-core`: parallel runner, configuration,
//! artifact output and the acceptance suite.

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod parallel;

pub use error::CliError;
pub use parallel::Parallel;
