use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::DistanceMatrix;
use crate::error::{bad_param, FlowError, Result};

/// Layer sizes of the feed-forward denoiser.
///
/// Encoder: `input → hidden[0] → … → hidden[k-1] → latent`, with the
/// projected sinusoidal time embedding added to the first pre-activation.
/// The decoder mirrors it back to `input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaeArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub time_dim: usize,
}

impl DaeArch {
    /// 32×32 matrices, one hidden layer of 256, latent 128.
    pub fn standard(latent_dim: usize) -> Self {
        Self { input_dim: 1024, hidden: vec![256], latent_dim, time_dim: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(bad_param("input and latent dims must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(bad_param("need at least one non-empty hidden layer"));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(bad_param("time embedding dim must be even and >= 2"));
        }
        Ok(())
    }

    fn encoder_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.input_dim];
        v.extend(&self.hidden);
        v.push(self.latent_dim);
        v
    }

    fn decoder_sizes(&self) -> Vec<usize> {
        let mut v = self.encoder_sizes();
        v.reverse();
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    /// `in × out`, so a batch is mapped as `X·W + b`.
    pub(crate) w: Array2<f64>,
    pub(crate) b: Array1<f64>,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound)),
            b: Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound)),
        }
    }

    fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.len()) }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of the diffusion step, `[sin(t ω_i), cos(t ω_i)]`
/// with `ω_i = 10000^(-2i/d)`.
pub(crate) fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        out[i] = (t * w).sin();
        out[half + i] = (t * w).cos();
    }
    out
}

/// Parameters of the denoising autoencoder. Immutable once trained and safe
/// to share across threads for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeModel {
    arch: DaeArch,
    pub(crate) enc: Vec<Linear>,
    pub(crate) time: Linear,
    pub(crate) dec: Vec<Linear>,
}

/// Gradients with the same layout as [`DaeModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DaeGrads {
    pub(crate) enc: Vec<Linear>,
    pub(crate) time: Linear,
    pub(crate) dec: Vec<Linear>,
}

impl DaeGrads {
    pub fn flat(&self) -> Vec<f64> {
        layer_iter(&self.enc, &self.time, &self.dec)
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        layer_iter(&self.enc, &self.time, &self.dec)
            .flat_map(|l| [l.w.as_slice().unwrap(), l.b.as_slice().unwrap()])
            .collect()
    }
}

fn layer_iter<'a>(
    enc: &'a [Linear],
    time: &'a Linear,
    dec: &'a [Linear],
) -> impl Iterator<Item = &'a Linear> {
    enc.iter().chain(std::iter::once(time)).chain(dec.iter())
}

/// A segment's latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLatent {
    pub segment_id: Option<u64>,
    pub vector: Vec<f64>,
}

struct Cache {
    /// Input of every layer, encoder then decoder.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every activated layer, same indexing.
    pre: Vec<Option<Array2<f64>>>,
    time_in: Array2<f64>,
}

impl DaeModel {
    pub fn new(arch: DaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |sizes: &[usize], rng: &mut ChaCha8Rng| -> Vec<Linear> {
            sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect()
        };
        let enc = mk(&arch.encoder_sizes(), &mut rng);
        let time = Linear::init(arch.time_dim, arch.hidden[0], &mut rng);
        let dec = mk(&arch.decoder_sizes(), &mut rng);
        Ok(Self { arch, enc, time, dec })
    }

    pub fn arch(&self) -> &DaeArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Linear::len).sum()
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        layer_iter(&self.enc, &self.time, &self.dec)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(FlowError::ShapeMismatch { expected: self.param_count(), actual: flat.len() });
        }
        let mut off = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.enc
            .iter_mut()
            .chain(std::iter::once(&mut self.time))
            .chain(self.dec.iter_mut())
            .flat_map(|l| [l.w.as_slice_mut().unwrap(), l.b.as_slice_mut().unwrap()])
            .collect()
    }

    pub(crate) fn zero_grads(&self) -> DaeGrads {
        DaeGrads {
            enc: self.enc.iter().map(Linear::zeros_like).collect(),
            time: self.time.zeros_like(),
            dec: self.dec.iter().map(Linear::zeros_like).collect(),
        }
    }

    fn time_batch(&self, ts: &[f64]) -> Array2<f64> {
        let d = self.arch.time_dim;
        let mut te = Array2::zeros((ts.len(), d));
        for (r, &t) in ts.iter().enumerate() {
            te.row_mut(r).assign(&Array1::from(time_embedding(t, d)));
        }
        te
    }

    fn forward_cached(&self, x: &Array2<f64>, ts: &[f64]) -> (Array2<f64>, Array2<f64>, Cache) {
        let time_in = self.time_batch(ts);
        let temb = self.time.forward(&time_in.view());
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut h = x.clone();
        let n_enc = self.enc.len();
        for (i, layer) in self.enc.iter().enumerate() {
            let mut z = layer.forward(&h.view());
            if i == 0 {
                z += &temb;
            }
            inputs.push(std::mem::replace(&mut h, Array2::zeros((0, 0))));
            if i + 1 < n_enc {
                h = z.mapv(silu);
                pre.push(Some(z));
            } else {
                h = z;
                pre.push(None);
            }
        }
        let latent = h.clone();
        let n_dec = self.dec.len();
        for (i, layer) in self.dec.iter().enumerate() {
            let z = layer.forward(&h.view());
            inputs.push(std::mem::replace(&mut h, Array2::zeros((0, 0))));
            if i + 1 < n_dec {
                h = z.mapv(silu);
                pre.push(Some(z));
            } else {
                h = z;
                pre.push(None);
            }
        }
        (latent, h, Cache { inputs, pre, time_in })
    }

    /// Denoiser output `D(x_t, t)` for a batch of flattened matrices.
    pub fn denoise(&self, xt: &Array2<f64>, ts: &[f64]) -> Array2<f64> {
        self.forward_cached(xt, ts).1
    }

    /// Encoder half at `t = 0`; one latent row per input row.
    pub fn encode_batch(&self, x0: &Array2<f64>) -> Array2<f64> {
        let temb = self.time.forward(&self.time_batch(&vec![0.0; x0.nrows()]).view());
        let mut h = x0.clone();
        let n = self.enc.len();
        for (i, layer) in self.enc.iter().enumerate() {
            let mut z = layer.forward(&h.view());
            if i == 0 {
                z += &temb;
            }
            h = if i + 1 < n { z.mapv(silu) } else { z };
        }
        h
    }

    pub fn encode(&self, x0: &DistanceMatrix) -> Result<FlowLatent> {
        self.check_input(x0.values().len())?;
        let row = Array2::from_shape_vec((1, x0.values().len()), x0.values().to_vec()).unwrap();
        Ok(FlowLatent { segment_id: None, vector: self.encode_batch(&row).row(0).to_vec() })
    }

    pub fn encode_all(&self, matrices: &[DistanceMatrix]) -> Result<Array2<f64>> {
        let x = stack(matrices, self.arch.input_dim)?;
        let mut out = Array2::zeros((matrices.len(), self.arch.latent_dim));
        for start in (0..matrices.len()).step_by(256) {
            let end = (start + 256).min(matrices.len());
            let chunk = x.slice(s![start..end, ..]).to_owned();
            out.slice_mut(s![start..end, ..]).assign(&self.encode_batch(&chunk));
        }
        Ok(out)
    }

    /// Clean-input reconstruction `D(x_0, 0)`.
    pub fn reconstruct(&self, x0: &DistanceMatrix) -> Result<Vec<f64>> {
        self.check_input(x0.values().len())?;
        let row = Array2::from_shape_vec((1, x0.values().len()), x0.values().to_vec()).unwrap();
        Ok(self.denoise(&row, &[0.0]).row(0).to_vec())
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.arch.input_dim {
            return Err(FlowError::ShapeMismatch { expected: self.arch.input_dim, actual: len });
        }
        Ok(())
    }

    /// Mean squared error `mean((D(x_t, t) - x_0)²)` over all elements and
    /// its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x0: &Array2<f64>,
        xt: &Array2<f64>,
        ts: &[f64],
    ) -> (f64, DaeGrads) {
        let (_, out, cache) = self.forward_cached(xt, ts);
        let diff = &out - x0;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let mut delta = diff * (2.0 / count);
        let mut grads = self.zero_grads();
        let n_enc = self.enc.len();
        let layers: Vec<&Linear> = self.enc.iter().chain(self.dec.iter()).collect();
        for idx in (0..layers.len()).rev() {
            if let Some(z) = &cache.pre[idx] {
                delta.zip_mut_with(z, |d, &zz| *d *= silu_grad(zz));
            }
            let input = &cache.inputs[idx];
            let g = if idx < n_enc { &mut grads.enc[idx] } else { &mut grads.dec[idx - n_enc] };
            g.w = input.t().dot(&delta);
            g.b = delta.sum_axis(Axis(0));
            if idx == 0 {
                grads.time.w = cache.time_in.t().dot(&delta);
                grads.time.b = delta.sum_axis(Axis(0));
            } else {
                delta = delta.dot(&layers[idx].w.t());
            }
        }
        (loss, grads)
    }

    /// Loss only, for gradient checks.
    pub fn loss(&self, x0: &Array2<f64>, xt: &Array2<f64>, ts: &[f64]) -> f64 {
        let out = self.denoise(xt, ts);
        let diff = &out - x0;
        diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64
    }
}

pub(crate) fn stack(matrices: &[DistanceMatrix], dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((matrices.len(), dim));
    for (r, m) in matrices.iter().enumerate() {
        if m.values().len() != dim {
            return Err(FlowError::ShapeMismatch { expected: dim, actual: m.values().len() });
        }
        x.row_mut(r).assign(&ndarray::ArrayView1::from(m.values()));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny() -> DaeModel {
        let arch = DaeArch { input_dim: 9, hidden: vec![6], latent_dim: 3, time_dim: 4 };
        DaeModel::new(arch, 11).unwrap()
    }

    #[test]
    fn tiny_model_is_small() {
        assert!(tiny().param_count() <= 200, "{}", tiny().param_count());
    }

    #[test]
    fn shapes_are_preserved() {
        let m = DaeModel::new(DaeArch::standard(128), 0).unwrap();
        let dm = DistanceMatrix::from_values(32, vec![0.1; 1024]).unwrap();
        assert_eq!(m.reconstruct(&dm).unwrap().len(), 1024);
        assert_eq!(m.encode(&dm).unwrap().vector.len(), 128);
        let bad = DistanceMatrix::from_values(3, vec![0.0; 9]).unwrap();
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = Array2::from_shape_fn((4, 9), |_| rng.random_range(0.0..1.0));
        let xt = x0.mapv(|v| 0.9 * v) + Array2::from_shape_fn((4, 9), |_| {
            0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let ts = [10.0, 40.0, 70.0, 100.0];
        let (_, grads) = model.loss_and_grad(&x0, &xt, &ts);
        let analytic = grads.flat();
        let base = model.flat_params();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            model.set_flat_params(&p).unwrap();
            let up = model.loss(&x0, &xt, &ts);
            p[i] -= 2.0 * h;
            model.set_flat_params(&p).unwrap();
            let down = model.loss(&x0, &xt, &ts);
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn identical_inputs_identical_latents() {
        let m = DaeModel::new(DaeArch::standard(16), 5).unwrap();
        let dm = DistanceMatrix::from_values(32, (0..1024).map(|i| (i % 31) as f64 / 31.0).collect())
            .unwrap();
        assert_eq!(m.encode(&dm).unwrap(), m.encode(&dm.clone()).unwrap());
    }

    #[test]
    fn time_embedding_at_zero() {
        let e = time_embedding(0.0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
