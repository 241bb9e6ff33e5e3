//! Command-line pipeline over continuous-time dynamic graphs.

pub mod config;
pub mod error;
pub mod generate;
pub mod interpret;
pub mod pipeline;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
