//! The `mfglab` command-line tool: configuration, presets, pipelines writing CSV/JSON
//! artifacts with a manifest, and the acceptance suite.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod artifacts;
pub mod cli;
pub mod config;
pub mod error;
pub mod oracle;
pub mod pipelines;
pub mod presets;

pub use config::Config;
pub use error::CliError;
pub use pipelines::{run, RunOutcome};
