//! Linear noise schedule and the scalar quantities derived from it.
//!
//! All arrays are computed once in `f64`. Storage is 0-based (`betas()[0]`
//! is β_1), while every accessor taking `t` expects `1 <= t <= T`.

use alloc::format;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    alpha_bar_prev: Vec<f64>,
    posterior_variances: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly interpolated from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::InvalidRange(
                "schedule needs at least one timestep".into(),
            ));
        }
        let ok = beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0;
        if !ok || !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(Error::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    let f = i as f64 / (timesteps - 1) as f64;
                    beta_start * (1.0 - f) + beta_end * f
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut alpha_bar_prev = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            alpha_bar_prev.push(acc);
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_variances = alphas
            .iter()
            .zip(&alpha_bars)
            .zip(&alpha_bar_prev)
            .map(|((a, ab), abp)| (1.0 - abp) * (1.0 - a) / (1.0 - ab))
            .collect();
        Self {
            betas,
            alphas,
            alpha_bars,
            alpha_bar_prev,
            posterior_variances,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.timesteps() {
            Err(Error::TimestepOutOfRange {
                t,
                max: self.timesteps(),
            })
        } else {
            Ok(t - 1)
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.check(t)?])
    }

    /// ᾱ_{t-1}, equal to 1 at t = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar_prev[self.check(t)?])
    }

    /// σ_t = (1 - ᾱ_{t-1})(1 - α_t) / (1 - ᾱ_t); zero at t = 1.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_variances[self.check(t)?])
    }

    /// Coefficients `(coef_xt, coef_x0)` of the posterior mean
    /// `coef_xt * x_t + coef_x0 * x_0`.
    pub fn posterior_mean_coeffs(&self, t: usize) -> Result<(f64, f64)> {
        let i = self.check(t)?;
        let (a, ab, abp) = (self.alphas[i], self.alpha_bars[i], self.alpha_bar_prev[i]);
        let coef_xt = a.sqrt() * (1.0 - abp) / (1.0 - ab);
        let coef_x0 = abp.sqrt() * (1.0 - a) / (1.0 - ab);
        Ok((coef_xt, coef_x0))
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bars_prev(&self) -> &[f64] {
        &self.alpha_bar_prev
    }

    pub fn posterior_variances(&self) -> &[f64] {
        &self.posterior_variances
    }
}
