//! Forward noising and closed-form reverse-step means over image batches.
//!
//! Every operation takes one timestep per batch element. No clamping happens
//! here; values leave model space only through [`ImageTensor::to_metric_space`].

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Space};

fn check_timesteps(t: &[usize], batch: usize, s: &NoiseSchedule) -> Result<()> {
    if t.len() != batch {
        return Err(Error::ShapeMismatch {
            context: "timesteps per batch element",
            expected: vec![batch],
            found: vec![t.len()],
        });
    }
    for &ti in t {
        s.check(ti)?;
    }
    Ok(())
}

/// `out[b] = ca(t_b) * a[b] + cb(t_b) * b[b]`.
fn combine<T: Real>(
    a: &ImageTensor<T>,
    b: &ImageTensor<T>,
    t: &[usize],
    space: Space,
    coeffs: impl Fn(usize) -> Result<(f64, f64)>,
) -> Result<ImageTensor<T>> {
    let n = a.per_sample();
    let mut data = Vec::with_capacity(a.data().len());
    for (i, &ti) in t.iter().enumerate() {
        let (ca, cb) = coeffs(ti)?;
        let (ca, cb) = (T::of(ca), T::of(cb));
        data.extend(
            a.data()[i * n..(i + 1) * n]
                .iter()
                .zip(&b.data()[i * n..(i + 1) * n])
                .map(|(&x, &y)| ca * x + cb * y),
        );
    }
    ImageTensor::new(a.shape(), data, space)
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`.
pub fn q_sample<T: Real>(
    x0: &ImageTensor<T>,
    t: &[usize],
    eps: &ImageTensor<T>,
    s: &NoiseSchedule,
) -> Result<ImageTensor<T>> {
    x0.expect_shape(eps, "q_sample")?;
    x0.expect_space(Space::Model)?;
    check_timesteps(t, x0.batch(), s)?;
    combine(x0, eps, t, Space::Model, |ti| {
        let ab = s.alpha_bar(ti)?;
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    })
}

/// Mean of q(x_{t-1} | x_t, x_0).
pub fn q_posterior_mean<T: Real>(
    x0: &ImageTensor<T>,
    xt: &ImageTensor<T>,
    t: &[usize],
    s: &NoiseSchedule,
) -> Result<ImageTensor<T>> {
    x0.expect_shape(xt, "q_posterior_mean")?;
    check_timesteps(t, x0.batch(), s)?;
    combine(xt, x0, t, Space::Model, |ti| s.posterior_mean_coeffs(ti))
}

/// Reverse-step mean from a noise estimate:
/// `(x_t - (1 - α_t) / sqrt(1 - ᾱ_t) * eps_hat) / sqrt(α_t)`.
pub fn mean_from_eps<T: Real>(
    xt: &ImageTensor<T>,
    t: &[usize],
    eps_hat: &ImageTensor<T>,
    s: &NoiseSchedule,
) -> Result<ImageTensor<T>> {
    xt.expect_shape(eps_hat, "mean_from_eps")?;
    check_timesteps(t, xt.batch(), s)?;
    combine(xt, eps_hat, t, Space::Model, |ti| {
        let a = s.alpha(ti)?;
        let ab = s.alpha_bar(ti)?;
        let inv = 1.0 / a.sqrt();
        Ok((inv, -inv * (1.0 - a) / (1.0 - ab).sqrt()))
    })
}

/// I.i.d. standard normal tensor in model space.
pub fn standard_normal<T: Real, R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> ImageTensor<T> {
    ImageTensor::from_fn(shape, Space::Model, |_| {
        let v: f64 = rng.sample(StandardNormal);
        T::of(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> ImageTensor<f64> {
        ImageTensor::new([1, 1, 1, 1], vec![v], Space::Model).unwrap()
    }

    fn two_step() -> NoiseSchedule {
        NoiseSchedule::linear(2, 0.1, 0.2).unwrap()
    }

    #[test]
    fn q_sample_limits_and_scalar_case() {
        let s = two_step();
        let x = scalar(1.0);
        let zero = scalar(0.0);
        let ab = s.alpha_bar(2).unwrap();
        assert_eq!(q_sample(&x, &[2], &zero, &s).unwrap().data()[0], ab.sqrt());
        assert_eq!(
            q_sample(&zero, &[2], &x, &s).unwrap().data()[0],
            (1.0 - ab).sqrt()
        );
        let xt = q_sample(&x, &[2], &x, &s).unwrap().data()[0];
        assert!((xt - 1.377678).abs() < 1e-6, "{xt}");
    }

    #[test]
    fn posterior_mean_cases() {
        let s = two_step();
        let x0 = scalar(0.3);
        let xt = scalar(-0.7);
        assert_eq!(q_posterior_mean(&x0, &xt, &[1], &s).unwrap().data()[0], 0.3);
        // 0.319438 * 1.377678 + 0.677631, evaluated by hand
        let m = q_posterior_mean(&scalar(1.0), &scalar(1.377678), &[2], &s)
            .unwrap()
            .data()[0];
        assert!((m - 1.117714).abs() < 1e-6, "{m}");
        assert_eq!(
            q_posterior_mean(&scalar(0.0), &scalar(0.0), &[2], &s)
                .unwrap()
                .data()[0],
            0.0
        );
    }

    #[test]
    fn mean_from_eps_cases() {
        let s = two_step();
        let m = mean_from_eps(&scalar(0.5), &[2], &scalar(0.0), &s)
            .unwrap()
            .data()[0];
        assert!((m - 0.5 / 0.8f64.sqrt()).abs() < 1e-15);
        let m = mean_from_eps(&scalar(1.377678), &[2], &scalar(1.0), &s)
            .unwrap()
            .data()[0];
        assert!((m - 1.117714).abs() < 1e-6, "{m}");
    }

    #[test]
    fn timestep_and_shape_errors() {
        let s = two_step();
        let x = scalar(1.0);
        assert!(matches!(
            q_sample(&x, &[3], &x, &s),
            Err(Error::TimestepOutOfRange { t: 3, max: 2 })
        ));
        assert!(matches!(
            q_sample(&x, &[1, 1], &x, &s),
            Err(Error::ShapeMismatch { .. })
        ));
        let wide = ImageTensor::<f64>::zeros([1, 1, 1, 2], Space::Model);
        assert!(matches!(
            mean_from_eps(&x, &[1], &wide, &s),
            Err(Error::ShapeMismatch { .. })
        ));
        let metric = ImageTensor::<f64>::zeros([1, 1, 1, 1], Space::Metric);
        assert!(matches!(
            q_sample(&metric, &[1], &x, &s),
            Err(Error::WrongSpace { .. })
        ));
    }

    #[test]
    fn per_element_timesteps_broadcast() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let x0 = ImageTensor::<f64>::from_fn([2, 1, 1, 3], Space::Model, |i| i as f64 * 0.1);
        let eps = ImageTensor::<f64>::from_fn([2, 1, 1, 3], Space::Model, |i| 1.0 - i as f64 * 0.2);
        let xt = q_sample(&x0, &[3, 9], &eps, &s).unwrap();
        for b in 0..2 {
            let t = [3, 9][b];
            let single = q_sample(&x0.item(b), &[t], &eps.item(b), &s).unwrap();
            assert_eq!(single.data(), xt.sample(b));
        }
    }

    #[test]
    fn operations_are_pure() {
        let s = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = standard_normal::<f32, _>([2, 3, 4, 4], &mut rng);
        let eps = standard_normal::<f32, _>([2, 3, 4, 4], &mut rng);
        let a = q_sample(&x0, &[5, 40], &eps, &s).unwrap();
        let b = q_sample(&x0, &[5, 40], &eps, &s).unwrap();
        assert_eq!(a, b);
    }
}
