//! Verification suites, experiment configuration and the `varlex` command line.

pub mod cli;
pub mod config;
pub mod report;
pub mod suites;

pub use cli::run;
