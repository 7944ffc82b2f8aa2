use cpdm_core::diffusion::{mean_from_eps, q_posterior_mean, q_sample, standard_normal};
use cpdm_core::rng::{stream, Role};
use cpdm_core::{ImageTensor, NoiseSchedule, Space};
use proptest::prelude::*;

fn scalar(v: f64) -> ImageTensor<f64> {
    ImageTensor::new([1, 1, 1, 1], vec![v], Space::Model).unwrap()
}

proptest! {
    #[test]
    fn schedule_invariants(t_max in 1usize..400, start in 1e-5f64..0.05, span in 0.0f64..0.5) {
        let end = (start + span).min(0.9);
        let s = NoiseSchedule::linear(t_max, start, end).unwrap();
        let mut prev_bar = 1.0;
        for t in 1..=t_max {
            let b = s.beta(t).unwrap();
            prop_assert!(b > 0.0 && b < 1.0);
            if t > 1 {
                prop_assert!(b >= s.beta(t - 1).unwrap());
            }
            prop_assert_eq!(s.alpha(t).unwrap(), 1.0 - b);
            let bar = s.alpha_bar(t).unwrap();
            prop_assert!(bar > 0.0 && bar < prev_bar);
            prop_assert_eq!(s.alpha_bar_prev(t).unwrap(), prev_bar);
            prop_assert!((bar - prev_bar * s.alpha(t).unwrap()).abs() <= 1e-15);
            let v = s.posterior_variance(t).unwrap();
            if t == 1 {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
            prev_bar = bar;
        }
    }

    #[test]
    fn posterior_mean_matches_noise_form(
        t in 1usize..=1000,
        x0 in -1.0f64..1.0,
        eps in -4.0f64..4.0,
    ) {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let (x0, eps) = (scalar(x0), scalar(eps));
        let xt = q_sample(&x0, &[t], &eps, &s).unwrap();
        let a = q_posterior_mean(&x0, &xt, &[t], &s).unwrap().data()[0];
        let b = mean_from_eps(&xt, &[t], &eps, &s).unwrap().data()[0];
        prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3), "{} vs {}", a, b);
    }
}

#[test]
fn forward_marginal_moments() {
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let n = 10_000;
    let x0 = ImageTensor::from_fn([1, 3, 2, 2], Space::Model, |i| i as f64 / 6.0 - 0.9);
    for (case, t) in [1usize, 250, 1000].into_iter().enumerate() {
        let mut rng = stream(11, Role::Noise, case as u64);
        let mut sum = vec![0.0; x0.data().len()];
        let mut sq = vec![0.0; x0.data().len()];
        for _ in 0..n {
            let eps = standard_normal(x0.shape(), &mut rng);
            let xt = q_sample(&x0, &[t], &eps, &s).unwrap();
            for (i, v) in xt.data().iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let bar = s.alpha_bar(t).unwrap();
        for (i, &x) in x0.data().iter().enumerate() {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!(
                (mean - bar.sqrt() * x).abs() < 4.0 / (n as f64).sqrt(),
                "t={t} mean {mean}"
            );
            assert!((var / (1.0 - bar) - 1.0).abs() < 0.1, "t={t} var {var}");
        }
    }
}
