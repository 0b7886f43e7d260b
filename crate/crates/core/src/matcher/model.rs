use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{infonce_with_grad, softmax};
use super::text::TextEmbedder;
use super::{dot, norm};
use crate::binio::{put_f64, put_u32, Reader};
use crate::error::{bad_param, FlowError, Result};
use crate::optim::{Adam, AdamConfig};

/// Row-major `rows × cols` map without bias.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) w: Vec<f64>,
}

impl Dense {
    fn init(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (cols as f64).sqrt();
        Self { rows, cols, w: (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect() }
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.w.chunks_exact(self.cols).zip(y) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
        out
    }

    fn add_outer(grad: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
        for (row, &d) in grad.chunks_exact_mut(cols).zip(dy) {
            if d != 0.0 {
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
    }
}

const ATTENTION_GAIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub epochs: usize,
    /// Upper bound; a batch never holds the same caption twice.
    pub batch: usize,
    pub lr: f64,
    pub tau: f64,
    pub common_dim: usize,
    pub seed: u64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { epochs: 30, batch: 32, lr: 1e-3, tau: 0.07, common_dim: 128, seed: 0 }
    }
}

/// A caption paired with the flow latents it describes (row indices into
/// the latent table handed to [`train_matcher`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSample {
    pub caption: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherReport {
    /// Loss over the evaluation batches before the first update.
    pub initial_loss: f64,
    /// Loss over the same batches after each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Text and flow projections into a shared space, plus the query and key
/// maps of the attention that pools a caption's segments. Values are the
/// projected flow embeddings themselves, so pooled vectors live in the same
/// space that index entries do.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    tau: f64,
    /// Per-dimension latent standardization applied before `flow_proj`.
    latent_mean: Vec<f64>,
    latent_inv_std: Vec<f64>,
    pub(crate) text_proj: Dense,
    flow_proj: Dense,
    wq: Dense,
    wk: Dense,
}

/// Gradients in parameter order: text_proj, flow_proj, wq, wk.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherGrads(pub [Vec<f64>; 4]);

impl MatcherModel {
    pub fn new(text_dim: usize, latent_dim: usize, common_dim: usize, tau: f64, seed: u64) -> Result<Self> {
        if text_dim == 0 || latent_dim == 0 || common_dim == 0 {
            return Err(bad_param("matcher dimensions must be positive"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(bad_param(format!("temperature must be positive, got {tau}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            tau,
            latent_mean: vec![0.0; latent_dim],
            latent_inv_std: vec![1.0; latent_dim],
            text_proj: Dense::init(common_dim, text_dim, 1.0, &mut rng),
            flow_proj: Dense::init(common_dim, latent_dim, 1.0, &mut rng),
            // near-uniform attention at the start, so every member is pulled
            // toward its caption before the pooling sharpens
            wq: Dense::init(common_dim, common_dim, ATTENTION_GAIN, &mut rng),
            wk: Dense::init(common_dim, common_dim, ATTENTION_GAIN, &mut rng),
        })
    }

    pub fn text_dim(&self) -> usize {
        self.text_proj.cols
    }

    pub fn latent_dim(&self) -> usize {
        self.flow_proj.cols
    }

    pub fn common_dim(&self) -> usize {
        self.text_proj.rows
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn params(&self) -> [&Dense; 4] {
        [&self.text_proj, &self.flow_proj, &self.wq, &self.wk]
    }

    fn params_mut(&mut self) -> [&mut Dense; 4] {
        [&mut self.text_proj, &mut self.flow_proj, &mut self.wq, &mut self.wk]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|d| d.w.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|d| d.w.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(FlowError::ShapeMismatch { expected: self.param_count(), actual: flat.len() });
        }
        let mut off = 0;
        for d in self.params_mut() {
            let n = d.w.len();
            d.w.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_dim(expected: usize, v: &[f64]) -> Result<()> {
        if v.len() != expected {
            return Err(FlowError::ShapeMismatch { expected, actual: v.len() });
        }
        Ok(())
    }

    /// Unnormalized common-space text vector.
    pub fn project_text(&self, text_emb: &[f64]) -> Result<Vec<f64>> {
        Self::check_dim(self.text_dim(), text_emb)?;
        Ok(self.text_proj.apply(text_emb))
    }

    /// Fits the latent standardization to the given rows.
    pub fn fit_latent_scaling(&mut self, rows: &[&[f64]]) -> Result<()> {
        let d = self.latent_dim();
        if rows.is_empty() {
            return Err(bad_param("no latents to fit scaling on"));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            Self::check_dim(d, r)?;
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        self.latent_inv_std = var.iter().map(|s| 1.0 / (s / rows.len() as f64).sqrt().max(1e-8)).collect();
        self.latent_mean = mean;
        Ok(())
    }

    fn standardize(&self, latent: &[f64]) -> Vec<f64> {
        latent
            .iter()
            .zip(&self.latent_mean)
            .zip(&self.latent_inv_std)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    /// Unnormalized common-space flow vector.
    pub fn project_flow(&self, latent: &[f64]) -> Result<Vec<f64>> {
        Self::check_dim(self.latent_dim(), latent)?;
        Ok(self.flow_proj.apply(&self.standardize(latent)))
    }

    /// Attention pooling of a segment set with the caption as query.
    pub fn aggregate(&self, text_emb: &[f64], latents: &[&[f64]]) -> Result<Vec<f64>> {
        let u = self.project_text(text_emb)?;
        let flows = latents.iter().map(|z| self.project_flow(z)).collect::<Result<Vec<_>>>()?;
        let keys: Vec<Vec<f64>> = flows.iter().map(|f| self.wk.apply(f)).collect();
        super::cross_attention(&self.wq.apply(&u), &keys, &flows)
    }

    /// Cosine between a caption and a single segment in the common space.
    pub fn similarity(&self, text_emb: &[f64], latent: &[f64]) -> Result<f64> {
        let u = self.project_text(text_emb)?;
        let f = self.project_flow(latent)?;
        Ok(dot(&u, &f) / (norm(&u) * norm(&f)))
    }

    /// Contrastive loss of one batch and its parameter gradients.
    pub fn loss_and_grad(&self, text_embs: &[&[f64]], sets: &[Vec<&[f64]>]) -> Result<(f64, MatcherGrads)> {
        if text_embs.len() != sets.len() {
            return Err(bad_param("every caption needs a segment set"));
        }
        let scale = 1.0 / (self.common_dim() as f64).sqrt();
        struct Fwd {
            u: Vec<f64>,
            q: Vec<f64>,
            f: Vec<Vec<f64>>,
            k: Vec<Vec<f64>>,
            w: Vec<f64>,
        }
        let mut fwd = Vec::with_capacity(sets.len());
        let mut pooled = Vec::with_capacity(sets.len());
        for (e, set) in text_embs.iter().zip(sets) {
            if set.is_empty() {
                return Err(bad_param("segment set is empty"));
            }
            let u = self.project_text(e)?;
            let q = self.wq.apply(&u);
            let f = set.iter().map(|z| self.project_flow(z)).collect::<Result<Vec<_>>>()?;
            let k: Vec<Vec<f64>> = f.iter().map(|fi| self.wk.apply(fi)).collect();
            let w = softmax(&k.iter().map(|ki| dot(&q, ki) * scale).collect::<Vec<_>>());
            let mut g = vec![0.0; self.common_dim()];
            for (wi, fi) in w.iter().zip(&f) {
                for (gj, x) in g.iter_mut().zip(fi) {
                    *gj += wi * x;
                }
            }
            pooled.push(g);
            fwd.push(Fwd { u, q, f, k, w });
        }
        let texts: Vec<Vec<f64>> = fwd.iter().map(|s| s.u.clone()).collect();
        let nce = infonce_with_grad(&texts, &pooled, self.tau)?;

        let c = self.common_dim();
        let mut grads = MatcherGrads(self.params().map(|d| vec![0.0; d.w.len()]));
        let [gt, gf, gq, gk] = &mut grads.0;
        for (b, s) in fwd.iter().enumerate() {
            let dg = &nce.d_flow[b];
            let dw: Vec<f64> = s.f.iter().map(|fi| dot(dg, fi)).collect();
            let mean: f64 = s.w.iter().zip(&dw).map(|(w, d)| w * d).sum();
            let mut dq = vec![0.0; c];
            for i in 0..s.f.len() {
                let da = s.w[i] * (dw[i] - mean) * scale;
                for (x, ki) in dq.iter_mut().zip(&s.k[i]) {
                    *x += da * ki;
                }
                let dk: Vec<f64> = s.q.iter().map(|qj| da * qj).collect();
                Dense::add_outer(gk, c, &dk, &s.f[i]);
                let mut df = self.wk.apply_t(&dk);
                for (x, g) in df.iter_mut().zip(dg) {
                    *x += s.w[i] * g;
                }
                Dense::add_outer(gf, self.latent_dim(), &df, &self.standardize(sets[b][i]));
            }
            Dense::add_outer(gq, c, &dq, &s.u);
            let mut du = self.wq.apply_t(&dq);
            for (x, g) in du.iter_mut().zip(&nce.d_text[b]) {
                *x += g;
            }
            Dense::add_outer(gt, self.text_dim(), &du, text_embs[b]);
        }
        Ok((nce.loss, grads))
    }
}

/// Groups sample indices into batches of at most `batch`, never placing two
/// samples with the same caption in one batch. Order follows `order`;
/// singleton batches are dropped since they carry no negatives.
fn caption_batches(order: &[usize], captions: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut pending: Vec<usize> = order.to_vec();
    let mut out = Vec::new();
    while !pending.is_empty() {
        let mut cur: Vec<usize> = Vec::with_capacity(batch);
        let mut rest = Vec::with_capacity(pending.len());
        for i in pending {
            if cur.len() < batch && !cur.iter().any(|&j| captions[j] == captions[i]) {
                cur.push(i);
            } else {
                rest.push(i);
            }
        }
        pending = rest;
        if cur.len() >= 2 {
            out.push(cur);
        }
    }
    out
}

/// Trains the matcher by in-batch contrast of each caption against the
/// attention-pooled flow embeddings of its segment set. Everything random
/// derives from `cfg.seed`.
pub fn train_matcher(
    samples: &[MatchSample],
    latents: &[Vec<f64>],
    embedder: &dyn TextEmbedder,
    cfg: &MatcherConfig,
) -> Result<(MatcherModel, MatcherReport)> {
    let mut caption_ids: HashMap<&str, usize> = HashMap::new();
    let mut texts: Vec<String> = Vec::new();
    let captions: Vec<usize> = samples
        .iter()
        .map(|s| {
            *caption_ids.entry(s.caption.as_str()).or_insert_with(|| {
                texts.push(s.caption.clone());
                texts.len() - 1
            })
        })
        .collect();
    if texts.len() < 2 {
        return Err(bad_param("matcher training needs at least two distinct captions"));
    }
    if cfg.batch < 2 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(bad_param("batch must be >= 2, epochs and lr positive"));
    }
    let latent_dim = latents.first().map(Vec::len).ok_or_else(|| bad_param("latent table is empty"))?;
    for s in samples {
        if s.members.is_empty() {
            return Err(bad_param(format!("caption `{}` has no segments", s.caption)));
        }
        if let Some(&m) = s.members.iter().find(|&&m| m >= latents.len()) {
            return Err(bad_param(format!("segment row {m} out of range")));
        }
    }
    if let Some(z) = latents.iter().find(|z| z.len() != latent_dim) {
        return Err(FlowError::ShapeMismatch { expected: latent_dim, actual: z.len() });
    }
    let text_embs: Vec<Vec<f64>> = embedder.embed_batch(&texts)?.into_iter().map(|t| t.vector).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MatcherModel::new(embedder.dim(), latent_dim, cfg.common_dim, cfg.tau, rng.random())?;
    let used: Vec<&[f64]> = {
        let mut rows: Vec<usize> = samples.iter().flat_map(|s| s.members.iter().copied()).collect();
        rows.sort_unstable();
        rows.dedup();
        rows.into_iter().map(|r| latents[r].as_slice()).collect()
    };
    model.fit_latent_scaling(&used)?;
    let mut opt = Adam::new(AdamConfig::new(cfg.lr));

    let batch_inputs = |idx: &[usize]| -> (Vec<&[f64]>, Vec<Vec<&[f64]>>) {
        let t = idx.iter().map(|&i| text_embs[captions[i]].as_slice()).collect();
        let s = idx.iter().map(|&i| samples[i].members.iter().map(|&m| latents[m].as_slice()).collect()).collect();
        (t, s)
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let eval_batches = caption_batches(&order, &captions, cfg.batch);
    let eval_loss = |m: &MatcherModel| -> Result<f64> {
        let mut total = 0.0;
        for b in &eval_batches {
            let (t, s) = batch_inputs(b);
            total += m.loss_and_grad(&t, &s)?.0;
        }
        Ok(total / eval_batches.len().max(1) as f64)
    };
    let mut report = MatcherReport { initial_loss: eval_loss(&model)?, epoch_losses: Vec::new(), steps: 0 };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for b in caption_batches(&order, &captions, cfg.batch) {
            let (t, s) = batch_inputs(&b);
            let (_, grads) = model.loss_and_grad(&t, &s)?;
            let params: Vec<&mut [f64]> = model.params_mut().into_iter().map(|d| d.w.as_mut_slice()).collect();
            opt.step(params, grads.0.iter().map(Vec::as_slice).collect());
            report.steps += 1;
        }
        report.epoch_losses.push(eval_loss(&model)?);
    }
    Ok((model, report))
}

/// In-batch retrieval: samples are grouped into caption-unique batches (as in
/// training, but in the given order) and each caption must rank its own
/// pooled segment set first among the batch. Returns the hit fraction.
pub fn in_batch_top1(
    model: &MatcherModel,
    samples: &[MatchSample],
    latents: &[Vec<f64>],
    embedder: &dyn TextEmbedder,
    batch: usize,
) -> Result<f64> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let captions: Vec<usize> = samples
        .iter()
        .map(|s| {
            let n = ids.len();
            *ids.entry(s.caption.as_str()).or_insert(n)
        })
        .collect();
    let order: Vec<usize> = (0..samples.len()).collect();
    let batches = caption_batches(&order, &captions, batch.max(2));
    if batches.is_empty() {
        return Err(bad_param("need at least two distinct captions"));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for b in batches {
        let mut texts = Vec::with_capacity(b.len());
        let mut pooled = Vec::with_capacity(b.len());
        for &i in &b {
            let s = &samples[i];
            let e = embedder.embed(&s.caption)?.vector;
            let set: Vec<&[f64]> = s.members.iter().map(|&m| latents[m].as_slice()).collect();
            pooled.push(model.aggregate(&e, &set)?);
            texts.push(model.project_text(&e)?);
        }
        for (i, u) in texts.iter().enumerate() {
            let cos = |g: &Vec<f64>| dot(u, g) / (norm(u) * norm(g));
            let best = (0..pooled.len()).fold(0, |a, j| if cos(&pooled[j]) > cos(&pooled[a]) { j } else { a });
            hits += usize::from(best == i);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of latents whose most similar caption is their own class's.
pub fn caption_accuracy(
    model: &MatcherModel,
    caption_embs: &[Vec<f64>],
    latents: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    if latents.len() != labels.len() {
        return Err(FlowError::ShapeMismatch { expected: latents.len(), actual: labels.len() });
    }
    if caption_embs.is_empty() || latents.is_empty() {
        return Err(bad_param("need captions and latents"));
    }
    let texts = caption_embs.iter().map(|e| model.project_text(e)).collect::<Result<Vec<_>>>()?;
    let mut hits = 0;
    for (z, &label) in latents.iter().zip(labels) {
        let f = model.project_flow(z)?;
        let mut best = (f64::NEG_INFINITY, 0);
        for (c, u) in texts.iter().enumerate() {
            let s = dot(u, &f) / norm(u);
            if s > best.0 {
                best = (s, c);
            }
        }
        hits += usize::from(best.1 == label);
    }
    Ok(hits as f64 / latents.len() as f64)
}

const MAGIC: &[u8; 4] = b"FQMT";
const VERSION: u32 = 1;

/// `FQMT`, u32 version, u32 text_dim, u32 latent_dim, u32 common_dim,
/// f64 temperature, latent mean and inverse std, then text_proj, flow_proj,
/// wq, wk as row-major little-endian f64.
pub fn encode_matcher(model: &MatcherModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(28 + model.param_count() * 8);
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, model.text_dim() as u32, model.latent_dim() as u32, model.common_dim() as u32] {
        put_u32(&mut buf, v);
    }
    put_f64(&mut buf, model.tau);
    for p in model.latent_mean.iter().chain(&model.latent_inv_std).copied().chain(model.flat_params()) {
        put_f64(&mut buf, p);
    }
    buf
}

pub fn decode_matcher(bytes: &[u8]) -> Result<MatcherModel> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(FlowError::Format("not a matcher checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FlowError::Format(format!("unsupported matcher version {version}")));
    }
    let (t, l, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let tau = r.f64()?;
    if t.max(l).max(c) > 1 << 16 {
        return Err(FlowError::Format("implausible matcher dimensions".into()));
    }
    let mut model = MatcherModel::new(t, l, c, tau, 0).map_err(|e| FlowError::Format(e.to_string()))?;
    model.latent_mean = r.f64_vec(l)?;
    model.latent_inv_std = r.f64_vec(l)?;
    let flat = r.f64_vec(model.param_count())?;
    r.finish()?;
    model.set_flat_params(&flat)?;
    Ok(model)
}

pub fn save_matcher(model: &MatcherModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_matcher(model))?;
    Ok(())
}

pub fn load_matcher(path: impl AsRef<Path>) -> Result<MatcherModel> {
    decode_matcher(&fs::read(path)?)
}
