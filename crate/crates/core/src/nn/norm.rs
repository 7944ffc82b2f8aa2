use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{FeatureMap, Init, ModelParameters, ParamRegistry};
use crate::real::Real;

const EPS: f64 = 1e-5;

/// Group normalization with a per-channel affine transform.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
    pub groups: usize,
}

#[derive(Debug, Clone)]
pub struct GnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl GroupNorm {
    /// Uses `gcd(channels, 8)` groups.
    pub fn new(reg: &mut ParamRegistry, name: &str, channels: usize) -> Self {
        let gamma = reg.add(format!("{name}.gamma"), vec![channels], Init::Ones);
        let beta = reg.add(format!("{name}.beta"), vec![channels], Init::Zeros);
        Self {
            gamma,
            beta,
            channels,
            groups: gcd(channels, 8),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        x: &FeatureMap<T>,
    ) -> (FeatureMap<T>, GnCache<T>) {
        debug_assert_eq!(x.channels, self.channels);
        let plane = x.plane();
        let per_group = self.channels / self.groups;
        let n = per_group * plane;
        let nf = T::of(n as f64);
        let (gamma, beta) = (p.get(self.gamma), p.get(self.beta));
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut rstd = Vec::with_capacity(self.groups);
        let mut out = FeatureMap::zeros(x.channels, x.height, x.width);
        for g in 0..self.groups {
            let span = g * n..(g + 1) * n;
            let xs = &x.data[span.clone()];
            let mean = xs.iter().copied().sum::<T>() / nf;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + T::of(EPS)).sqrt();
            rstd.push(r);
            for (xh, &v) in xhat[span].iter_mut().zip(xs) {
                *xh = (v - mean) * r;
            }
            for c in g * per_group..(g + 1) * per_group {
                let s = c * plane..(c + 1) * plane;
                for (o, &xh) in out.data[s.clone()].iter_mut().zip(&xhat[s]) {
                    *o = gamma[c] * xh + beta[c];
                }
            }
        }
        (out, GnCache { xhat, rstd })
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParameters<T>,
        g: &mut ModelParameters<T>,
        cache: &GnCache<T>,
        dy: &FeatureMap<T>,
    ) -> FeatureMap<T> {
        let plane = dy.plane();
        let per_group = self.channels / self.groups;
        let n = per_group * plane;
        let nf = T::of(n as f64);
        let gamma = p.get(self.gamma);
        {
            let mut dgamma = vec![T::zero(); self.channels];
            let mut dbeta = vec![T::zero(); self.channels];
            for c in 0..self.channels {
                let s = c * plane..(c + 1) * plane;
                for (&d, &xh) in dy.data[s.clone()].iter().zip(&cache.xhat[s]) {
                    dgamma[c] += d * xh;
                    dbeta[c] += d;
                }
            }
            for (a, b) in g.get_mut(self.gamma).iter_mut().zip(dgamma) {
                *a += b;
            }
            for (a, b) in g.get_mut(self.beta).iter_mut().zip(dbeta) {
                *a += b;
            }
        }
        let mut dx = FeatureMap::zeros(dy.channels, dy.height, dy.width);
        let mut dxhat = vec![T::zero(); n];
        for grp in 0..self.groups {
            let base = grp * n;
            let chans = grp * per_group..(grp + 1) * per_group;
            for (dst, (src, &g)) in dxhat
                .chunks_mut(plane)
                .zip(dy.data[base..base + n].chunks(plane).zip(&gamma[chans]))
            {
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v * g;
                }
            }
            let xh = &cache.xhat[base..base + n];
            let sum_d = dxhat.iter().copied().sum::<T>();
            let sum_dx = dxhat.iter().zip(xh).map(|(&d, &x)| d * x).sum::<T>();
            let r = cache.rstd[grp];
            for i in 0..n {
                dx.data[base + i] = r / nf * (nf * dxhat[i] - sum_d - xh[i] * sum_dx);
            }
        }
        dx
    }
}
