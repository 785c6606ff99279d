//! Command-line harness: configuration, experiment runs and CSV output.

pub mod config;
pub mod error;
pub mod output;
pub mod report;
pub mod run;

pub use fracsteer_core as core;
