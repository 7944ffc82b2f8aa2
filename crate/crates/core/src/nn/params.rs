use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::real::Real;

/// How a parameter is filled by `init_parameters`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Collects parameter declarations while a network layout is built.
#[derive(Debug, Default, Clone)]
pub struct ParamRegistry {
    specs: Vec<ParamSpec>,
}

impl ParamRegistry {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> usize {
        let name = name.into();
        debug_assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named weight arrays in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ModelParameters<T> {
    pub fn from_params(params: Vec<Param<T>>) -> Self {
        Self { params }
    }

    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Self {
            params: specs
                .iter()
                .map(|s| Param {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data: vec![T::zero(); s.len()],
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![T::zero(); p.data.len()],
                })
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    #[inline]
    pub fn get_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.params[idx].data
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over every scalar, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParameters<U> {
        ModelParameters {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// True when names and shapes agree with `specs`, in order.
    pub fn matches(&self, specs: &[ParamSpec]) -> bool {
        self.params.len() == specs.len()
            && self
                .params
                .iter()
                .zip(specs)
                .all(|(p, s)| p.name == s.name && p.shape == s.shape && p.data.len() == s.len())
    }
}
