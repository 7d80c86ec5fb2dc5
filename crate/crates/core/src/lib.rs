//! Learning core for population-based preference RL.
//!
//! Everything here is pure computation over `alloc`: networks, environments,
//! the soft actor-critic learner, the Bradley-Terry reward model, simulated
//! teachers and the population orchestrator. File formats, the CLI and the
//! HTTP service live in the `pb2` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod config;
pub mod envs;
pub mod nn;
pub mod population;
pub mod rewardmodel;
pub mod sac;
pub mod teacher;

pub use error::{Error, Result};
