//! Ancestral sampling: start from `x_T ~ N(0, I)` and apply the learned
//! reverse step down to `t = 1`, conditioned on the degraded image `y0`.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;

use crate::diffusion::{mean_from_eps, standard_normal};
use crate::error::{Error, Result};
use crate::network::{ModelParameters, Network};
use crate::real::Real;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Space};

/// Anything that can estimate the noise in `x_t`.
pub trait NoisePredictor<T: Real> {
    /// Whether [`predict`](Self::predict) wants `y0 - x_t`.
    fn uses_difference(&self) -> bool;

    fn predict(
        &self,
        xt: &ImageTensor<T>,
        t: &[usize],
        y0: &ImageTensor<T>,
        diff: Option<&ImageTensor<T>>,
    ) -> Result<ImageTensor<T>>;
}

/// A network with frozen weights.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a, T> {
    pub net: &'a Network,
    pub params: &'a ModelParameters<T>,
}

impl<T: Real> NoisePredictor<T> for Denoiser<'_, T> {
    fn uses_difference(&self) -> bool {
        self.net.config().use_difference_condition
    }

    fn predict(
        &self,
        xt: &ImageTensor<T>,
        t: &[usize],
        y0: &ImageTensor<T>,
        diff: Option<&ImageTensor<T>>,
    ) -> Result<ImageTensor<T>> {
        self.net.predict_noise(self.params, xt, t, y0, diff)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub seed: u64,
    /// Must equal the schedule length the model was trained with.
    pub timesteps: usize,
    pub record_trajectory: bool,
    /// Keep every k-th intermediate when recording.
    pub trajectory_every: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            timesteps: 1000,
            record_trajectory: false,
            trajectory_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput<T> {
    /// `x_0` in model space.
    pub image: ImageTensor<T>,
    /// `(t, x_t)` pairs from `t = T` down to `t = 0`, when recorded.
    pub trajectory: Vec<(usize, ImageTensor<T>)>,
    /// `(t, z injected)` for every reverse step, in execution order.
    pub noise_injected: Vec<(usize, bool)>,
}

/// `x_{t-1} = mean_from_eps(x_t, t, eps_theta(x_t, t, y0, y0 - x_t)) + sqrt(σ_t) z`.
///
/// `z = None` means no noise; at `t = 1` any `z` is ignored since σ_1 = 0.
pub fn reverse_step<T: Real, M: NoisePredictor<T> + ?Sized>(
    model: &M,
    xt: &ImageTensor<T>,
    t: usize,
    y0: &ImageTensor<T>,
    z: Option<&ImageTensor<T>>,
    s: &NoiseSchedule,
) -> Result<ImageTensor<T>> {
    s.check(t)?;
    xt.expect_shape(y0, "reverse_step y0")?;
    let ts = vec![t; xt.batch()];
    let diff = if model.uses_difference() {
        Some(y0.zip_map(xt, "y0 - x_t", |a, b| a - b)?)
    } else {
        None
    };
    let eps_hat = model.predict(xt, &ts, y0, diff.as_ref())?;
    let mut mean = mean_from_eps(xt, &ts, &eps_hat, s)?;
    if t > 1 {
        if let Some(z) = z {
            xt.expect_shape(z, "reverse_step z")?;
            let sd = T::of(s.posterior_variance(t)?.sqrt());
            for (m, &zi) in mean.data_mut().iter_mut().zip(z.data()) {
                *m += sd * zi;
            }
        }
    }
    Ok(mean)
}

/// Full reverse chain from `t = T` to `t = 1`.
pub fn sample<T: Real, M: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    model: &M,
    y0: &ImageTensor<T>,
    s: &NoiseSchedule,
    cfg: &SampleConfig,
    rng: &mut R,
) -> Result<SampleOutput<T>> {
    if cfg.timesteps != s.timesteps() {
        return Err(Error::Config(alloc::format!(
            "sampler configured for T = {} but the schedule has T = {}",
            cfg.timesteps,
            s.timesteps()
        )));
    }
    y0.expect_space(Space::Model)?;
    let every = cfg.trajectory_every.max(1);
    let mut x: ImageTensor<T> = standard_normal(y0.shape(), rng);
    let mut trajectory = Vec::new();
    let mut noise_injected = Vec::with_capacity(s.timesteps());
    if cfg.record_trajectory {
        trajectory.push((s.timesteps(), x.clone()));
    }
    for t in (1..=s.timesteps()).rev() {
        let z = (t > 1).then(|| standard_normal::<T, R>(y0.shape(), rng));
        noise_injected.push((t, z.is_some()));
        x = match reverse_step(model, &x, t, y0, z.as_ref(), s) {
            Ok(next) => next,
            Err(Error::NonFinite(_)) => return Err(Error::NonFiniteSample { t }),
            Err(e) => return Err(e),
        };
        if !x.all_finite() {
            return Err(Error::NonFiniteSample { t });
        }
        if cfg.record_trajectory && ((t - 1) % every == 0) {
            trajectory.push((t - 1, x.clone()));
        }
    }
    Ok(SampleOutput {
        image: x,
        trajectory,
        noise_injected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::rng::{stream, Role};

    /// Returns the same constant for every pixel.
    struct Constant(f64);

    impl NoisePredictor<f64> for Constant {
        fn uses_difference(&self) -> bool {
            false
        }

        fn predict(
            &self,
            xt: &ImageTensor<f64>,
            _t: &[usize],
            _y0: &ImageTensor<f64>,
            _diff: Option<&ImageTensor<f64>>,
        ) -> Result<ImageTensor<f64>> {
            Ok(ImageTensor::from_fn(xt.shape(), Space::Model, |_| self.0))
        }
    }

    fn scalar(v: f64) -> ImageTensor<f64> {
        ImageTensor::new([1, 1, 1, 1], vec![v], Space::Model).unwrap()
    }

    #[test]
    fn scalar_chain_with_forced_prediction() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let out =
            reverse_step(&Constant(1.0), &scalar(1.377678), 2, &scalar(0.0), None, &s).unwrap();
        assert!((out.data()[0] - 1.117714).abs() < 1e-6, "{}", out.data()[0]);
    }

    #[test]
    fn last_step_ignores_noise() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let z = scalar(5.0);
        let with =
            reverse_step(&Constant(0.3), &scalar(0.4), 1, &scalar(0.0), Some(&z), &s).unwrap();
        let mean = mean_from_eps(&scalar(0.4), &[1], &scalar(0.3), &s).unwrap();
        assert_eq!(with, mean);
    }

    #[test]
    fn untrained_model_step_is_scaled_input_plus_noise() {
        let cfg = ModelConfig {
            base_channels: 4,
            channel_multipliers: vec![1, 2],
            blocks_per_level: 1,
            time_embed_dim: 8,
            use_difference_condition: true,
            use_ccm: true,
        };
        let net = Network::new(&cfg).unwrap();
        let params: ModelParameters<f64> = net.init_parameters(0);
        let model = Denoiser {
            net: &net,
            params: &params,
        };
        let s = NoiseSchedule::linear(20, 1e-3, 0.05).unwrap();
        let mut rng = stream(1, Role::Sampling, 0);
        let xt: ImageTensor<f64> = standard_normal([1, 3, 4, 4], &mut rng);
        let y0: ImageTensor<f64> = standard_normal([1, 3, 4, 4], &mut rng);
        let z: ImageTensor<f64> = standard_normal([1, 3, 4, 4], &mut rng);
        let t = 7;
        let out = reverse_step(&model, &xt, t, &y0, Some(&z), &s).unwrap();
        let a = s.alpha(t).unwrap();
        let sd = s.posterior_variance(t).unwrap().sqrt();
        for ((o, x), zi) in out.data().iter().zip(xt.data()).zip(z.data()) {
            assert!((o - (x / a.sqrt() + sd * zi)).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let s = NoiseSchedule::linear(5, 0.01, 0.2).unwrap();
        assert!(matches!(
            reverse_step(&Constant(0.0), &scalar(0.0), 6, &scalar(0.0), None, &s),
            Err(Error::TimestepOutOfRange { .. })
        ));
        let wide = ImageTensor::<f64>::zeros([1, 1, 1, 2], Space::Model);
        assert!(reverse_step(&Constant(0.0), &scalar(0.0), 2, &wide, None, &s).is_err());
        let cfg = SampleConfig {
            timesteps: 4,
            ..Default::default()
        };
        let mut rng = stream(0, Role::Sampling, 0);
        assert!(matches!(
            sample(&Constant(0.0), &scalar(0.0), &s, &cfg, &mut rng),
            Err(Error::Config(_))
        ));
        // a prediction that blows up the chain
        let cfg = SampleConfig {
            timesteps: 5,
            ..Default::default()
        };
        assert!(matches!(
            sample(&Constant(f64::INFINITY), &scalar(0.0), &s, &cfg, &mut rng),
            Err(Error::NonFiniteSample { .. })
        ));
    }

    #[test]
    fn noise_at_every_step_but_the_last_and_trajectory_spacing() {
        let s = NoiseSchedule::linear(20, 1e-3, 0.1).unwrap();
        let cfg = SampleConfig {
            seed: 0,
            timesteps: 20,
            record_trajectory: true,
            trajectory_every: 5,
        };
        let y0 = ImageTensor::<f64>::zeros([2, 3, 2, 2], Space::Model);
        let mut rng = stream(0, Role::Sampling, 0);
        let out = sample(&Constant(0.0), &y0, &s, &cfg, &mut rng).unwrap();
        assert_eq!(out.image.shape(), y0.shape());
        assert_eq!(out.noise_injected.len(), 20);
        for &(t, used) in &out.noise_injected {
            assert_eq!(used, t > 1);
        }
        let steps: Vec<usize> = out.trajectory.iter().map(|(t, _)| *t).collect();
        assert_eq!(steps, vec![20, 15, 10, 5, 0]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = NoiseSchedule::linear(30, 1e-3, 0.1).unwrap();
        let cfg = SampleConfig {
            timesteps: 30,
            ..Default::default()
        };
        let y0 = ImageTensor::<f64>::zeros([1, 3, 2, 2], Space::Model);
        let a = sample(
            &Constant(0.1),
            &y0,
            &s,
            &cfg,
            &mut stream(4, Role::Sampling, 0),
        )
        .unwrap();
        let b = sample(
            &Constant(0.1),
            &y0,
            &s,
            &cfg,
            &mut stream(4, Role::Sampling, 0),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
