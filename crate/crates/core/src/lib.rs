//! Conditional denoising diffusion for paired image enhancement.
//!
//! The noise predictor sees the noisy sample `x_t`, the degraded input `y0`
//! and the per-step difference `y0 - x_t`, and a shallow content-compensation
//! pyramid over `y0` feeds the last block of every encoder level.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the training loop
//! with checkpointing, and the command-line tool live in the `cpdm` crate.
//!
//! Timesteps are 1-based everywhere in the public API: `t` ranges over
//! `1..=T`, and `alpha_bar(0)` is taken to be 1.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod degrade;
pub mod diffusion;
mod error;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod real;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use network::{ModelConfig, ModelParameters, Network};
pub use real::Real;
pub use schedule::NoiseSchedule;
pub use tensor::{ImageTensor, Space};
