//! Batched images in `B x C x H x W` layout, tagged with their value range.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Pixel convention: `Model` is `[-1, 1]` (network input/output), `Metric`
/// is `[0, 1]` (files and quality metrics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Model,
    Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
    space: Space,
}

impl<T: Real> ImageTensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>, space: Space) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch {
                context: "image tensor data length",
                expected: vec![len],
                found: vec![data.len()],
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image tensor entry {i}")));
        }
        Ok(Self { shape, data, space })
    }

    pub fn zeros(shape: [usize; 4], space: Space) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
            space,
        }
    }

    pub fn from_fn(shape: [usize; 4], space: Space, mut f: impl FnMut(usize) -> T) -> Self {
        let data = (0..shape.iter().product()).map(&mut f).collect();
        Self { shape, data, space }
    }

    /// Stack single images (each `1 x C x H x W`) along the batch axis.
    pub fn stack(items: &[&ImageTensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Config("cannot stack an empty list of images".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.per_sample());
        for it in items {
            if it.shape[1..] != first.shape[1..] {
                return Err(Error::ShapeMismatch {
                    context: "stack",
                    expected: first.shape.to_vec(),
                    found: it.shape.to_vec(),
                });
            }
            if it.space != first.space {
                return Err(Error::WrongSpace {
                    expected: first.space,
                    found: it.space,
                });
            }
            data.extend_from_slice(&it.data);
        }
        let b: usize = items.iter().map(|i| i.shape[0]).sum();
        Ok(Self {
            shape: [b, first.shape[1], first.shape[2], first.shape[3]],
            data,
            space: first.space,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn per_sample(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Pixels of batch element `b`.
    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.per_sample();
        &self.data[b * n..(b + 1) * n]
    }

    /// Batch element `b` as a `1 x C x H x W` tensor.
    pub fn item(&self, b: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.sample(b).to_vec(),
            space: self.space,
        }
    }

    pub fn expect_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                expected: self.shape.to_vec(),
                found: other.shape.to_vec(),
            });
        }
        Ok(())
    }

    pub fn expect_space(&self, space: Space) -> Result<()> {
        if self.space != space {
            return Err(Error::WrongSpace {
                expected: space,
                found: self.space,
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `[0, 1] -> [-1, 1]`.
    pub fn to_model_space(&self) -> Result<Self> {
        self.expect_space(Space::Metric)?;
        let two = T::of(2.0);
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| v * two - T::one()).collect(),
            space: Space::Model,
        })
    }

    /// `[-1, 1] -> [0, 1]`, clamping anything the sampler pushed out of range.
    pub fn to_metric_space(&self) -> Result<Self> {
        self.expect_space(Space::Model)?;
        let half = T::of(0.5);
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| ((v + T::one()) * half).max(T::zero()).min(T::one()))
                .collect(),
            space: Space::Metric,
        })
    }

    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            space: self.space,
        }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        context: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        self.expect_shape(other, context)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            space: self.space,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_conversions() {
        let m = ImageTensor::new([1, 1, 1, 3], vec![0.0f64, 0.5, 1.0], Space::Metric).unwrap();
        let model = m.to_model_space().unwrap();
        assert_eq!(model.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(model.to_metric_space().unwrap().data(), m.data());

        let over = ImageTensor::new([1, 1, 1, 2], vec![1.2f64, -1.5], Space::Model).unwrap();
        assert_eq!(over.to_metric_space().unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn wrong_space_is_rejected() {
        let m = ImageTensor::<f32>::zeros([1, 3, 2, 2], Space::Model);
        assert_eq!(
            m.to_model_space(),
            Err(Error::WrongSpace {
                expected: Space::Metric,
                found: Space::Model
            })
        );
        assert!(m.to_metric_space().unwrap().to_metric_space().is_err());
    }

    #[test]
    fn rejects_non_finite_and_bad_length() {
        assert!(ImageTensor::new([1, 1, 1, 2], vec![0.0f32, f32::NAN], Space::Model).is_err());
        assert!(ImageTensor::new([1, 1, 1, 2], vec![0.0f32], Space::Model).is_err());
    }

    #[test]
    fn stack_and_item() {
        let a = ImageTensor::<f32>::from_fn([1, 1, 2, 2], Space::Model, |i| i as f32);
        let b = ImageTensor::<f32>::from_fn([1, 1, 2, 2], Space::Model, |i| 10.0 + i as f32);
        let s = ImageTensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), [2, 1, 2, 2]);
        assert_eq!(s.item(1), b);
    }

    proptest::proptest! {
        #[test]
        fn metric_model_round_trip(vals in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let n = vals.len();
            let m = ImageTensor::new([1, 1, 1, n], vals, Space::Metric).unwrap();
            let back = m.to_model_space().unwrap().to_metric_space().unwrap();
            for (a, b) in m.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
