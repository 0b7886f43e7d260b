use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{stack, DaeArch, DaeModel};
use super::schedule::{make_schedule, NoiseSchedule};
use crate::descriptor::DistanceMatrix;
use crate::error::{bad_param, Result};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Noise steps drawn uniformly per sample. `[0]` trains a plain
    /// autoencoder.
    pub t_values: Vec<usize>,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub time_dim: usize,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl Default for DaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 128,
            lr: 1e-3,
            weight_decay: 0.0,
            t_values: (1..=10).map(|k| 10 * k).collect(),
            hidden: vec![256],
            latent_dim: 128,
            time_dim: 32,
            schedule_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            seed: 0,
        }
    }
}

impl DaeTrainConfig {
    /// Same recipe with noise disabled.
    pub fn autoencoder(mut self) -> Self {
        self.t_values = vec![0];
        self
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.schedule_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Minimizes `mean((D(x_t, t) - x_0)²)` with Adam. Initialization, shuffling,
/// noise steps and noise draws all come from `cfg.seed`, so two runs with the
/// same inputs produce bitwise-identical parameters.
pub fn train_dae(dataset: &[DistanceMatrix], cfg: &DaeTrainConfig) -> Result<(DaeModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(bad_param("training set is empty"));
    }
    if !(cfg.lr > 0.0) {
        return Err(bad_param(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(bad_param("batch and epochs must be positive"));
    }
    if cfg.t_values.is_empty() {
        return Err(bad_param("t_values must not be empty"));
    }
    let sched = cfg.schedule()?;
    if let Some(t) = cfg.t_values.iter().find(|&&t| t > sched.steps()) {
        return Err(bad_param(format!("noise step {t} exceeds schedule length")));
    }
    let dim = dataset[0].values().len();
    let arch = DaeArch {
        input_dim: dim,
        hidden: cfg.hidden.clone(),
        latent_dim: cfg.latent_dim,
        time_dim: cfg.time_dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DaeModel::new(arch, rng.random())?;
    let data = stack(dataset, dim)?;
    let mut opt = Adam::new(AdamConfig::new(cfg.lr).with_weight_decay(cfg.weight_decay));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs), steps: 0 };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let mut x0 = Array2::zeros((b, dim));
            let mut xt = Array2::zeros((b, dim));
            let mut ts = Vec::with_capacity(b);
            for (r, &idx) in chunk.iter().enumerate() {
                let t = cfg.t_values[rng.random_range(0..cfg.t_values.len())];
                let (a, s) = (sched.alpha(t), sched.sigma(t));
                let src = data.row(idx);
                x0.row_mut(r).assign(&src);
                let mut dst = xt.row_mut(r);
                for (d, &v) in dst.iter_mut().zip(src.iter()) {
                    let eps: f64 = if t == 0 { 0.0 } else { StandardNormal.sample(&mut rng) };
                    *d = a * v + s * eps;
                }
                ts.push(t as f64);
            }
            let (loss, grads) = model.loss_and_grad(&x0, &xt, &ts);
            opt.step(model.param_slices_mut(), grads.slices());
            total += loss;
            batches += 1;
            report.steps += 1;
        }
        report.epoch_losses.push(total / batches as f64);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_matrix(phase: f64) -> DistanceMatrix {
        let n = 32;
        let vals = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let d = (i as f64 - j as f64).abs() / 31.0;
                d * (1.0 - 0.2 * (phase + d * 3.0).sin().abs())
            })
            .collect();
        DistanceMatrix::from_values(n, vals).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(train_dae(&[], &DaeTrainConfig::default()).is_err());
        let cfg = DaeTrainConfig { lr: 0.0, ..Default::default() };
        assert!(train_dae(&[toy_matrix(0.0)], &cfg).is_err());
        let cfg = DaeTrainConfig { t_values: vec![2000], ..Default::default() };
        assert!(train_dae(&[toy_matrix(0.0)], &cfg).is_err());
    }

    #[test]
    fn memorizes_a_single_matrix() {
        // one sample per epoch, so every epoch is a single step
        let cfg = DaeTrainConfig { epochs: 200, ..Default::default() };
        let (_, report) = train_dae(&[toy_matrix(0.3)], &cfg).unwrap();
        assert_eq!(report.steps, 200);
        let best = report.epoch_losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best < 1e-4, "best loss {best}");
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<_> = (0..10).map(|i| toy_matrix(i as f64 * 0.4)).collect();
        let cfg = DaeTrainConfig { epochs: 3, batch: 4, hidden: vec![16], latent_dim: 8, seed: 9, ..Default::default() };
        let (a, ra) = train_dae(&data, &cfg).unwrap();
        let (b, rb) = train_dae(&data, &cfg).unwrap();
        let bits = |m: &DaeModel| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ra, rb);
    }
}
