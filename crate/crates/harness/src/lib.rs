//! Experiment driver: configuration files, runs, output files and rate fits.

pub mod config;
pub mod rates;
pub mod run;
