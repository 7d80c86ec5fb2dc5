//! Experiment harness for population-based preference RL.
//!
//! The learning itself lives in `pb2-core`. This crate adds what needs an
//! operating system: run manifests, on-disk formats, report tables, the
//! seeded runner, the human-teacher service and the `pb2` command line.

pub mod formats;
pub mod human;
pub mod manifest;
pub mod runner;
pub mod server;
pub mod table;

pub use pb2_core as core;
