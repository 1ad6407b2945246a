//! Command implementations behind the `qalign` binary.

pub mod analyze;
pub mod config;
pub mod curve;
pub mod run;
pub mod svg;
pub mod templates;
pub mod verify;
