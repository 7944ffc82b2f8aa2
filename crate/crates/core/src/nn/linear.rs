use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Init, ModelParameters, ParamRegistry};
use crate::real::Real;

/// Dense layer on a single vector; weight is `out x in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(reg: &mut ParamRegistry, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = reg.add(
            format!("{name}.weight"),
            vec![fan_out, fan_in],
            Init::FanIn(fan_in),
        );
        let bias = reg.add(
            String::from(name) + ".bias",
            vec![fan_out],
            Init::FanIn(fan_in),
        );
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, p: &ModelParameters<T>, x: &[T]) -> Vec<T> {
        let w = p.get(self.weight);
        let b = p.get(self.bias);
        (0..self.fan_out)
            .map(|o| {
                let row = &w[o * self.fan_in..(o + 1) * self.fan_in];
                b[o] + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()
            })
            .collect()
    }

    /// Accumulates weight/bias gradients and, when `dx` is given, the input gradient.
    pub fn backward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        g: &mut ModelParameters<T>,
        x: &[T],
        dy: &[T],
        dx: Option<&mut [T]>,
    ) {
        {
            let gw = g.get_mut(self.weight);
            for o in 0..self.fan_out {
                let row = &mut gw[o * self.fan_in..(o + 1) * self.fan_in];
                for (r, &v) in row.iter_mut().zip(x) {
                    *r += dy[o] * v;
                }
            }
        }
        for (gb, &d) in g.get_mut(self.bias).iter_mut().zip(dy) {
            *gb += d;
        }
        if let Some(dx) = dx {
            let w = p.get(self.weight);
            for o in 0..self.fan_out {
                let row = &w[o * self.fan_in..(o + 1) * self.fan_in];
                for (d, &a) in dx.iter_mut().zip(row) {
                    *d += dy[o] * a;
                }
            }
        }
    }
}
