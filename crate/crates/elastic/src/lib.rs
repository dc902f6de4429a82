//! Files, configuration and command-line surface for `elastic-core`:
//! `NEMELAST/1` checkpoints, `key = value` run configs, CSV metrics and the
//! pipeline each subcommand runs.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod format;
pub mod pipeline;
pub mod records;
