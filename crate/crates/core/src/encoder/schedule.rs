use crate::error::{bad_param, Result};

/// Linear-β DDPM schedule with `α_t = sqrt(Π_{i≤t}(1 - β_i))` and
/// `σ_t = sqrt(1 - α_t²)`. Index 0 is the clean input (`α_0 = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(bad_param("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(bad_param(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha = Vec::with_capacity(steps + 1);
    let mut sigma = Vec::with_capacity(steps + 1);
    alpha.push(1.0);
    sigma.push(0.0);
    let mut prod = 1.0;
    for b in &betas {
        prod *= 1.0 - b;
        alpha.push(prod.sqrt());
        sigma.push((1.0 - prod).sqrt());
    }
    Ok(NoiseSchedule { betas, alpha, sigma })
}

/// `x_t = α_t x_0 + σ_t ε`, elementwise. `t = 0` returns `x_0` unchanged.
pub fn corrupt(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > sched.steps() {
        return Err(bad_param(format!("t = {t} exceeds schedule length {}", sched.steps())));
    }
    if eps.len() != x0.len() {
        return Err(crate::FlowError::ShapeMismatch { expected: x0.len(), actual: eps.len() });
    }
    if t == 0 {
        return Ok(x0.to_vec());
    }
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}
