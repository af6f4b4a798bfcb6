//! Command-line plumbing for `snica`: configuration files, the binary tensor
//! format, checkpoints and the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod tensor_file;

pub use error::{CliError, Result};
