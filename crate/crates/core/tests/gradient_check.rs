//! Analytic gradients of the noise-prediction loss against central differences.

use cpdm_core::diffusion::standard_normal;
use cpdm_core::rng::{stream, Role};
use cpdm_core::{ImageTensor, ModelConfig, ModelParameters, Network};
use rand::Rng;

const STEP: f64 = 1e-4;

struct Problem {
    net: Network,
    params: ModelParameters<f64>,
    xt: ImageTensor<f64>,
    y0: ImageTensor<f64>,
    diff: ImageTensor<f64>,
    eps: ImageTensor<f64>,
    t: Vec<usize>,
}

impl Problem {
    fn new(cfg: ModelConfig, size: usize, batch: usize, seed: u64) -> Self {
        let net = Network::new(&cfg).unwrap();
        let mut params: ModelParameters<f64> = net.init_parameters(seed);
        // the zero-initialized head would zero every upstream gradient
        let mut rng = stream(seed, Role::Init, 1234);
        for name in ["head.conv.weight", "head.conv.bias"] {
            for v in &mut params.by_name_mut(name).unwrap().data {
                *v = rng.random_range(-0.2..0.2);
            }
        }
        let shape = [batch, 3, size, size];
        let mut rng = stream(seed, Role::Noise, 0);
        let xt = standard_normal::<f64, _>(shape, &mut rng);
        let y0 = standard_normal::<f64, _>(shape, &mut rng);
        let eps = standard_normal::<f64, _>(shape, &mut rng);
        let diff = y0.zip_map(&xt, "diff", |a, b| a - b).unwrap();
        let t = (0..batch).map(|b| 17 + 300 * b).collect();
        Self {
            net,
            params,
            xt,
            y0,
            diff,
            eps,
            t,
        }
    }

    /// Independent of `loss_and_grad`: prediction, then the mean squared error.
    fn loss(&self, params: &ModelParameters<f64>) -> f64 {
        let pred = self
            .net
            .predict_noise(params, &self.xt, &self.t, &self.y0, Some(&self.diff))
            .unwrap();
        let n = pred.data().len() as f64;
        pred.data()
            .iter()
            .zip(self.eps.data())
            .map(|(p, e)| (e - p) * (e - p))
            .sum::<f64>()
            / n
    }
}

/// Relative errors `|a - n| / max(|a|, |n|)` for every scalar parameter;
/// pairs where both magnitudes are below 1e-9 count as exact.
fn relative_errors(pb: &Problem) -> Vec<(String, f64)> {
    let (loss, grads) = pb
        .net
        .loss_and_grad(&pb.params, &pb.xt, &pb.t, &pb.y0, Some(&pb.diff), &pb.eps)
        .unwrap();
    assert!((loss - pb.loss(&pb.params)).abs() < 1e-12);

    let mut out = Vec::new();
    let mut work = pb.params.clone();
    let names: Vec<String> = pb.params.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let analytic = grads.iter().nth(pi).unwrap().data.clone();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = work.by_name(name).unwrap().data[i];
            work.by_name_mut(name).unwrap().data[i] = orig + STEP;
            let up = pb.loss(&work);
            work.by_name_mut(name).unwrap().data[i] = orig - STEP;
            let down = pb.loss(&work);
            work.by_name_mut(name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < 1e-9 {
                0.0
            } else {
                (a - numeric).abs() / scale
            };
            out.push((format!("{name}[{i}]"), rel));
        }
    }
    out
}

fn assert_gradients(errors: &[(String, f64)]) {
    let n = errors.len();
    let tight = errors.iter().filter(|(_, e)| *e < 1e-3).count();
    let worst = errors
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    println!(
        "{n} parameters: {tight} within 1e-3 ({:.2}%), worst {} = {:.3e}",
        100.0 * tight as f64 / n as f64,
        worst.0,
        worst.1
    );
    assert!(tight as f64 >= 0.95 * n as f64);
    assert!(worst.1 < 1e-2);
}

#[test]
fn single_level_model_d() {
    let cfg = ModelConfig {
        base_channels: 4,
        channel_multipliers: vec![1],
        blocks_per_level: 2,
        time_embed_dim: 8,
        use_difference_condition: true,
        use_ccm: true,
    };
    assert_gradients(&relative_errors(&Problem::new(cfg, 8, 1, 1)));
}

#[test]
fn two_levels_with_resampling_and_skips() {
    let cfg = ModelConfig {
        base_channels: 4,
        channel_multipliers: vec![1, 2],
        blocks_per_level: 2,
        time_embed_dim: 8,
        use_difference_condition: true,
        use_ccm: true,
    };
    assert_gradients(&relative_errors(&Problem::new(cfg, 8, 2, 2)));
}

#[test]
fn three_levels_without_conditioning_extras() {
    let cfg = ModelConfig {
        base_channels: 4,
        channel_multipliers: vec![1, 2, 2],
        blocks_per_level: 1,
        time_embed_dim: 4,
        use_difference_condition: false,
        use_ccm: false,
    };
    assert_gradients(&relative_errors(&Problem::new(cfg, 8, 1, 3)));
}
