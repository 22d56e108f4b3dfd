//! Command-line driver: declarative run configs, artifact plumbing and the
//! subcommands that chain the pipeline end to end.

pub mod app;
pub mod artifacts;
pub mod commands;
pub mod config;
pub mod svg;

pub use app::run;
