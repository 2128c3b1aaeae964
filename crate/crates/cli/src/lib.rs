//! Library side of the `tlflr` command-line tool: configuration, CSV input and
//! output, the stock-price curve transform, and the simulation benchmark and
//! real-data prediction runners.

pub mod bench;
pub mod config;
pub mod error;
pub mod io;
pub mod realdata;
pub mod stock;

pub use error::{CliError, CliResult};
