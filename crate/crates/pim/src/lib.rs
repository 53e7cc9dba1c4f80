//! File formats, run reports and the `pim` command-line tool built on [`pim_core`].

pub mod cli;
pub mod error;
pub mod format;
pub mod report;
pub mod runner;

pub use error::{CliError, Result};
