use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Space;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("image is in {found:?} space, expected {expected:?}")]
    WrongSpace { expected: Space, found: Space },

    #[error("model uses the difference condition but no y0 - x_t input was given")]
    MissingDifference,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step} (timesteps {timesteps:?}, samples {ids:?})")]
    NonFiniteLoss {
        step: u64,
        timesteps: Vec<usize>,
        ids: Vec<String>,
    },

    #[error("non-finite value in reverse process at t = {t}")]
    NonFiniteSample { t: usize },

    #[error("image {height}x{width} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
}
