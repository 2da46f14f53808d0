//! Driver for `neckflow-core`: configuration, monitor tables, snapshots, reports and
//! experiment recipes behind the `neckflow` binary.

pub mod config;
pub mod recipes;
pub mod report;
pub mod snapshot;
pub mod svg;
pub mod table;
