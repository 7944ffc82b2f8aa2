use alloc::vec::Vec;

use super::FeatureMap;
use crate::real::Real;

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `x * sigmoid(x)`.
pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient through SiLU given the pre-activation input.
pub fn silu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

pub fn upsample_nearest2x<T: Real>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (x.height, x.width);
    let mut out = FeatureMap::zeros(x.channels, 2 * h, 2 * w);
    for c in 0..x.channels {
        let src = &x.data[c * h * w..(c + 1) * h * w];
        let dst = &mut out.data[c * 4 * h * w..(c + 1) * 4 * h * w];
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                dst[oy * 2 * w + ox] = src[(oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2x_backward<T: Real>(dy: &FeatureMap<T>) -> FeatureMap<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = FeatureMap::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        let src = &dy.data[c * 4 * h * w..(c + 1) * 4 * h * w];
        let dst = &mut dx.data[c * h * w..(c + 1) * h * w];
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                dst[(oy / 2) * w + ox / 2] += src[oy * 2 * w + ox];
            }
        }
    }
    dx
}
