//! Std companion to `lrsift-core`: image file I/O, binary/JSON persistence
//! for feature sets and retrieval indices, corpus ingestion, experiment
//! drivers and the `lrsift` command-line tool.

pub mod bench;
pub mod config;
pub mod corpus;
pub mod error;
pub mod formats;
pub mod io;

pub use error::{CliError, ExitStatus};
