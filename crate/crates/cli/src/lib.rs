//! Command-line front end: trajectory calibration, verification, training
//! and reporting.

pub mod calibrate;
pub mod config;
pub mod error;
pub mod format;
pub mod report;

pub use error::CliError;
