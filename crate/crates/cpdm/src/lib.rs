//! Files, checkpoints, the training loop and the `cpdm` command-line tool
//! built on [`cpdm_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod enhance;
mod error;
pub mod eval;
pub mod image_io;
pub mod train;

pub use error::{Error, Result};
