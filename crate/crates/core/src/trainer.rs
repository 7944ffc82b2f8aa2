//! One optimization step of the noise-prediction objective, plus the
//! deterministic draws (data order, timesteps, noise) that feed it.
//!
//! The loop that owns checkpoints and logs lives in the `cpdm` crate; it
//! calls [`Trainer::step`] with batches assembled from [`Trainer::plan`].

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffusion::{q_sample, standard_normal};
use crate::error::{Error, Result};
use crate::network::{ModelParameters, Network};
use crate::optim::{AdamConfig, AdamState};
use crate::real::Real;
use crate::rng::{stream, Role};
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 10_000,
            batch_size: 16,
            learning_rate: 1e-4,
            seed: 0,
            checkpoint_every: 1_000,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.timesteps == 0 {
            return Err(Error::Config(
                "batch_size, checkpoint_every and timesteps must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Config("learning_rate must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStepReport {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Filled in by callers that have a clock.
    pub wall_time_ms: f64,
}

/// A raw (degraded) image and its clean reference, both in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<T> {
    pub id: String,
    pub y0: ImageTensor<T>,
    pub x0: ImageTensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<T> {
    pub ids: Vec<String>,
    pub x0: ImageTensor<T>,
    pub y0: ImageTensor<T>,
    pub t: Vec<usize>,
    pub eps: ImageTensor<T>,
}

/// What step `step` draws: dataset indices, one timestep per element, and
/// the noise tensor. Depends only on `(seed, step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan<T> {
    pub indices: Vec<usize>,
    pub t: Vec<usize>,
    pub eps: ImageTensor<T>,
}

/// Dataset index for the `position`-th draw: positions walk through a fresh
/// seeded permutation every epoch.
pub fn data_index(n: usize, seed: u64, position: u64) -> usize {
    let epoch = position / n as u64;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, Role::DataOrder, epoch));
    perm[(position % n as u64) as usize]
}

pub fn plan_step<T: Real>(
    n: usize,
    batch_size: usize,
    timesteps: usize,
    image_shape: [usize; 3],
    seed: u64,
    step: u64,
) -> StepPlan<T> {
    let start = step * batch_size as u64;
    let mut epoch_perm: Option<(u64, Vec<usize>)> = None;
    let indices = (0..batch_size as u64)
        .map(|i| {
            let pos = start + i;
            let epoch = pos / n as u64;
            if epoch_perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut stream(seed, Role::DataOrder, epoch));
                epoch_perm = Some((epoch, perm));
            }
            epoch_perm.as_ref().expect("set above").1[(pos % n as u64) as usize]
        })
        .collect();
    let mut trng = stream(seed, Role::Timesteps, step);
    let t = (0..batch_size)
        .map(|_| trng.random_range(1..=timesteps))
        .collect();
    let [c, h, w] = image_shape;
    let eps = standard_normal([batch_size, c, h, w], &mut stream(seed, Role::Noise, step));
    StepPlan { indices, t, eps }
}

pub fn assemble_batch<T: Real>(
    data: &[PairedSample<T>],
    plan: StepPlan<T>,
) -> Result<TrainingBatch<T>> {
    let picked: Vec<&PairedSample<T>> = plan.indices.iter().map(|&i| &data[i]).collect();
    let x0: Vec<&ImageTensor<T>> = picked.iter().map(|s| &s.x0).collect();
    let y0: Vec<&ImageTensor<T>> = picked.iter().map(|s| &s.y0).collect();
    Ok(TrainingBatch {
        ids: picked.iter().map(|s| s.id.clone()).collect(),
        x0: ImageTensor::stack(&x0)?,
        y0: ImageTensor::stack(&y0)?,
        t: plan.t,
        eps: plan.eps,
    })
}

/// Mean over batch and pixels of `(eps - eps_theta(x_t, t, y0, y0 - x_t))^2`
/// and its parameter gradient, without updating anything.
pub fn batch_loss<T: Real>(
    net: &Network,
    params: &ModelParameters<T>,
    schedule: &NoiseSchedule,
    batch: &TrainingBatch<T>,
) -> Result<(f64, ModelParameters<T>)> {
    let xt = q_sample(&batch.x0, &batch.t, &batch.eps, schedule)?;
    let diff = if net.config().use_difference_condition {
        Some(batch.y0.zip_map(&xt, "y0 - x_t", |a, b| a - b)?)
    } else {
        None
    };
    net.loss_and_grad(params, &xt, &batch.t, &batch.y0, diff.as_ref(), &batch.eps)
}

/// Loss, gradient and one optimizer update. Parameters are left untouched
/// when the loss is not finite.
pub fn train_step<T: Real>(
    net: &Network,
    params: &mut ModelParameters<T>,
    opt: &mut AdamState<T>,
    adam: &AdamConfig,
    schedule: &NoiseSchedule,
    batch: &TrainingBatch<T>,
    step: u64,
) -> Result<TrainStepReport> {
    let (loss, grads) = batch_loss(net, params, schedule, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            timesteps: batch.t.clone(),
            ids: batch.ids.clone(),
        });
    }
    let grad_norm = grads.l2_norm();
    opt.update(adam, params, &grads);
    Ok(TrainStepReport {
        step,
        loss,
        grad_norm,
        wall_time_ms: 0.0,
    })
}

/// Parameters, optimizer state and fixed settings of a training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub net: Network,
    pub schedule: NoiseSchedule,
    pub config: TrainConfig,
    pub params: ModelParameters<T>,
    pub opt: AdamState<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(net: Network, config: TrainConfig, params: ModelParameters<T>) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let opt = AdamState::new(&params);
        Ok(Self {
            net,
            schedule,
            config,
            params,
            opt,
        })
    }

    /// Number of completed updates.
    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    pub fn plan(&self, data: &[PairedSample<T>]) -> Result<StepPlan<T>> {
        let first = data
            .first()
            .ok_or_else(|| Error::Config("training set is empty".into()))?;
        let s = first.x0.shape();
        Ok(plan_step(
            data.len(),
            self.config.batch_size,
            self.config.timesteps,
            [s[1], s[2], s[3]],
            self.config.seed,
            self.opt.step,
        ))
    }

    /// Draw the next batch and take one update; the report's `step` is the
    /// 1-based index of the update just taken.
    pub fn step(&mut self, data: &[PairedSample<T>]) -> Result<TrainStepReport> {
        let batch = assemble_batch(data, self.plan(data)?)?;
        let adam = self.config.adam();
        let step = self.opt.step + 1;
        train_step(
            &self.net,
            &mut self.params,
            &mut self.opt,
            &adam,
            &self.schedule,
            &batch,
            step,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_order_is_a_permutation_per_epoch() {
        let n = 7;
        let mut seen: Vec<usize> = (0..n as u64).map(|p| data_index(n, 3, p)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let plan: StepPlan<f32> = plan_step(n, 4, 10, [3, 2, 2], 3, 1);
        let want: Vec<usize> = (4..8).map(|p| data_index(n, 3, p)).collect();
        assert_eq!(plan.indices, want);
    }

    #[test]
    fn plans_are_reproducible() {
        let a: StepPlan<f32> = plan_step(10, 8, 1000, [3, 4, 4], 9, 42);
        let b: StepPlan<f32> = plan_step(10, 8, 1000, [3, 4, 4], 9, 42);
        let c: StepPlan<f32> = plan_step(10, 8, 1000, [3, 4, 4], 9, 43);
        assert_eq!(a, b);
        assert_ne!(a.t, c.t);
        assert!(a.t.iter().all(|&t| (1..=1000).contains(&t)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let zero_steps = TrainConfig {
            total_steps: 0,
            ..Default::default()
        };
        assert!(zero_steps.validate().is_ok());
    }
}
