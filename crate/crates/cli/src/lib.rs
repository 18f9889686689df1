//! Command-line front end for the tabular policy-evaluation laboratory.
//!
//! Each subcommand resolves its settings from built-in defaults, an optional
//! sectioned key-value file, and flags (in that precedence order), runs the
//! experiment through `grape-core`, and writes CSV files with a fixed column
//! schema. Multi-trial experiments also emit an aggregate summary; the
//! control experiment additionally reports the best softmax temperature per
//! setting.

pub mod aggregate;
pub mod args;
pub mod config;
pub mod rows;
pub mod run;
