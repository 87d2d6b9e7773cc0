//! Library half of the `qbsde` binary: configuration, runs and reports.

pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod report;
pub mod run;
