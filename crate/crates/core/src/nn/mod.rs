//! Layers with explicit forward caches and backward passes.
//!
//! All layers work on one sample at a time (`C x H x W`). Parameters live in
//! a [`ModelParameters`] store and layers refer to them by index, so the
//! gradient buffer is just a second store with the same layout.

mod act;
mod conv;
mod linear;
mod norm;
mod params;

pub use act::{silu, silu_backward, upsample_nearest2x, upsample_nearest2x_backward};
pub use conv::{Conv2d, ConvCache, ConvOptions};
pub use linear::Linear;
pub use norm::{GnCache, GroupNorm};
pub use params::{Init, ModelParameters, Param, ParamRegistry, ParamSpec};

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// One sample's activations, `C x H x W` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_dims(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Channel-wise concatenation `[self; other]`.
    pub fn concat(&self, other: &Self) -> Self {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self::from_vec(
            self.channels + other.channels,
            self.height,
            self.width,
            data,
        )
    }

    /// Inverse of [`concat`](Self::concat): split after `first` channels.
    pub fn split(&self, first: usize) -> (Self, Self) {
        let n = first * self.plane();
        (
            Self::from_vec(first, self.height, self.width, self.data[..n].to_vec()),
            Self::from_vec(
                self.channels - first,
                self.height,
                self.width,
                self.data[n..].to_vec(),
            ),
        )
    }
}

pub fn conv_options(stride: usize, bias: bool) -> ConvOptions {
    ConvOptions {
        stride,
        bias,
        zero_init: false,
    }
}
