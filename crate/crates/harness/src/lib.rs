//! Experiment harness, analytic verification suite and command-line
//! front end for `forge_core`.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod experiments;
pub mod runs;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
