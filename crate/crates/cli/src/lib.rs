//! File I/O and subcommands behind the `bsst` binary.

pub mod commands;
pub mod error;
pub mod flo;
pub mod flows;
pub mod media;

pub use error::{CliError, Result};
