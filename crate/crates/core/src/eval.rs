//! Feature quality measures for frozen flow latents: linear-probe
//! accuracy, hypersphere uniformity, and a wall-clock scaling harness.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{describe_all, DistanceMatrix, Segment};
use crate::encoder::{train_dae, DaeTrainConfig};
use crate::error::{bad_param, FlowError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatureSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledFeatureSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(FlowError::ShapeMismatch { expected: features.len(), actual: labels.len() });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(bad_param(format!("label {l} out of range for {} classes", class_names.len())));
        }
        if let Some(d) = features.first().map(Vec::len) {
            if features.iter().any(|f| f.len() != d) {
                return Err(bad_param("features have inconsistent dimensions"));
            }
        }
        Ok(Self { features, labels, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 1e-2, batch: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out counts, `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Splits indices per class: one seeded shuffle of all samples, then the
/// first `round(split · n_c)` of each class in shuffled order go to training.
/// The split depends only on class membership, not on label values.
pub fn stratified_split(labels: &[usize], split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let quota: Vec<usize> = counts.iter().map(|&c| (split * c as f64).round() as usize).collect();
    let mut taken = vec![0usize; classes];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in order {
        let l = labels[i];
        if taken[l] < quota[l] {
            taken[l] += 1;
            train.push(i);
        } else {
            test.push(i);
        }
    }
    (train, test)
}

/// Trains a softmax-regression head on frozen features and reports held-out
/// accuracy. Features are standardized with training-set statistics.
pub fn linear_probe(set: &LabeledFeatureSet, split: f64, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let classes = set.num_classes();
    let counts = set.class_counts();
    if classes < 2 || counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(bad_param("linear probe needs at least two populated classes"));
    }
    if let Some(c) = counts.iter().find(|&&c| c < 10) {
        return Err(bad_param(format!("every class needs >= 10 samples, found {c}")));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(bad_param(format!("train fraction must lie in (0, 1), got {split}")));
    }
    if cfg.epochs == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(bad_param("probe epochs, batch and lr must be positive"));
    }
    let (train, test) = stratified_split(&set.labels, split, cfg.seed);
    let dim = set.features[0].len();

    let mut mean = vec![0.0; dim];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(&set.features[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut std = vec![0.0; dim];
    for &i in &train {
        for ((s, v), m) in std.iter_mut().zip(&set.features[i]).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-8));
    let x: Vec<Vec<f64>> = set
        .features
        .iter()
        .map(|f| f.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut w = vec![0.0; classes * dim];
    let mut b = vec![0.0; classes];
    let mut opt = Adam::new(AdamConfig::new(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order = train.clone();
    let mut logits = vec![0.0; classes];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let mut gw = vec![0.0; classes * dim];
            let mut gb = vec![0.0; classes];
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                softmax_logits(&w, &b, &x[i], &mut logits);
                for c in 0..classes {
                    let g = (logits[c] - if c == set.labels[i] { 1.0 } else { 0.0 }) * scale;
                    gb[c] += g;
                    for (gwk, xk) in gw[c * dim..(c + 1) * dim].iter_mut().zip(&x[i]) {
                        *gwk += g * xk;
                    }
                }
            }
            opt.step(vec![&mut w[..], &mut b[..]], vec![&gw[..], &gb[..]]);
        }
    }
    let accuracy_on = |idx: &[usize], logits: &mut Vec<f64>| {
        let hits = idx
            .iter()
            .filter(|&&i| {
                softmax_logits(&w, &b, &x[i], logits);
                argmax(logits) == set.labels[i]
            })
            .count();
        hits as f64 / idx.len().max(1) as f64
    };
    let mut confusion = vec![vec![0usize; classes]; classes];
    for &i in &test {
        softmax_logits(&w, &b, &x[i], &mut logits);
        confusion[set.labels[i]][argmax(&logits)] += 1;
    }
    Ok(ProbeReport {
        confusion,
        accuracy: accuracy_on(&test, &mut logits),
        train_accuracy: accuracy_on(&train, &mut logits),
        train_size: train.len(),
        test_size: test.len(),
    })
}

fn softmax_logits(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = b[c] + w[c * dim..(c + 1) * dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Largest feature count evaluated over every ordered pair.
pub const EXACT_UNIFORMITY_LIMIT: usize = 5000;
const SAMPLED_PAIRS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uniformity {
    pub value: f64,
    /// Standard error of `value`; `None` when computed exactly.
    pub std_error: Option<f64>,
    pub pairs: usize,
}

fn l2_normalized(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| {
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                f.iter().map(|v| v / n).collect()
            } else {
                f.clone()
            }
        })
        .collect()
}

fn pair_potential(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-2.0 * d2).exp()
}

/// `-log E[exp(-2 |f(x) - f(y)|²)]` over L2-normalized features, the
/// expectation running over all ordered pairs including `x = y`. Above
/// [`EXACT_UNIFORMITY_LIMIT`] features, a seeded uniform sample of pairs is
/// used instead and the standard error is reported.
pub fn uniformity(features: &[Vec<f64>], seed: u64) -> Result<Uniformity> {
    let n = features.len();
    if n < 2 {
        return Err(bad_param("uniformity needs at least two features"));
    }
    let f = l2_normalized(features);
    if n <= EXACT_UNIFORMITY_LIMIT {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += pair_potential(&f[i], &f[j]);
            }
        }
        let mean = (2.0 * off + n as f64) / (n * n) as f64;
        return Ok(Uniformity { value: -mean.ln(), std_error: None, pairs: n * n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..SAMPLED_PAIRS {
        let v = pair_potential(&f[rng.random_range(0..n)], &f[rng.random_range(0..n)]);
        s += v;
        s2 += v * v;
    }
    let m = SAMPLED_PAIRS as f64;
    let mean = s / m;
    let var = (s2 / m - mean * mean).max(0.0);
    let se_mean = (var / m).sqrt();
    Ok(Uniformity { value: -mean.ln(), std_error: Some(se_mean / mean), pairs: SAMPLED_PAIRS })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimedOp {
    DistanceMatrices,
    DaeTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub op: TimedOp,
    pub count: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Best-of-N wall clock per count.
    pub repeats: usize,
    pub dae_epochs: usize,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { repeats: 3, dae_epochs: 1, seed: 0 }
    }
}

/// Random helical arcs used as timing workload; generation is excluded from
/// the measured time.
pub fn timing_segments(count: usize, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let r = rng.random_range(0.2..2.0);
            let c = rng.random_range(0.0..1.0);
            let turn = rng.random_range(0.2..2.0);
            let points: Vec<Vec3> = (0..64)
                .map(|k| {
                    let a = turn * std::f64::consts::TAU * k as f64 / 63.0;
                    Vec3::new(r * a.cos(), r * a.sin(), c * a)
                })
                .collect();
            let len = crate::descriptor::polyline_length(&points);
            Segment { id: i as u64, streamline_id: i as u64, level: 0, arc_start: 0.0, arc_end: len, points }
        })
        .collect()
}

pub fn timing_scaling(counts: &[usize], op: TimedOp, cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    if counts.is_empty() {
        return Err(bad_param("need at least one dataset size"));
    }
    if counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(bad_param("dataset sizes must be sorted ascending"));
    }
    let max = *counts.last().unwrap();
    let segments = timing_segments(max, cfg.seed);
    let matrices: Vec<DistanceMatrix> = match op {
        TimedOp::DaeTraining => describe_all(&segments)?,
        TimedOp::DistanceMatrices => Vec::new(),
    };
    // warm-up at the largest size, so every count starts from the same
    // allocator and page-table state
    if op == TimedOp::DistanceMatrices {
        describe_all(&segments)?;
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let mut best = f64::INFINITY;
        for _ in 0..cfg.repeats.max(1) {
            let start = Instant::now();
            match op {
                TimedOp::DistanceMatrices => {
                    std::hint::black_box(describe_all(&segments[..count])?);
                }
                TimedOp::DaeTraining => {
                    if count > 0 {
                        let c = DaeTrainConfig { epochs: cfg.dae_epochs, seed: cfg.seed, ..Default::default() };
                        std::hint::black_box(train_dae(&matrices[..count], &c)?);
                    }
                }
            }
            best = best.min(start.elapsed().as_secs_f64());
        }
        rows.push(TimingRow { op, count, seconds: best });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn clusters(n_per: usize, sep: f64, seed: u64) -> LabeledFeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..4 {
            for _ in 0..n_per {
                let mut f: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
                f[c] += sep;
                features.push(f);
                labels.push(c);
            }
        }
        LabeledFeatureSet::new(features, labels, (0..4).map(|c| format!("c{c}")).collect()).unwrap()
    }

    #[test]
    fn separable_clusters_are_perfectly_probed() {
        let set = clusters(50, 10.0, 1);
        let r = linear_probe(&set, 0.8, &ProbeConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!((r.train_size, r.test_size), (160, 40));
    }

    #[test]
    fn shuffled_labels_sit_at_chance() {
        let mut set = clusters(500, 10.0, 2);
        set.labels.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
        let r = linear_probe(&set, 0.8, &ProbeConfig::default()).unwrap();
        assert!((0.19..=0.31).contains(&r.accuracy), "{}", r.accuracy);
    }

    #[test]
    fn degenerate_class_counts_are_rejected() {
        let set = clusters(5, 10.0, 1);
        assert!(linear_probe(&set, 0.8, &ProbeConfig::default()).is_err());
        let one = LabeledFeatureSet::new(vec![vec![0.0]; 20], vec![0; 20], vec!["a".into()]).unwrap();
        assert!(linear_probe(&one, 0.8, &ProbeConfig::default()).is_err());
        assert!(LabeledFeatureSet::new(vec![vec![0.0]], vec![3], vec!["a".into()]).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (train, test) = stratified_split(&labels, 0.8, 4);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        for c in 0..4 {
            assert_eq!(train.iter().filter(|&&i| labels[i] == c).count(), 20);
        }
    }

    #[test]
    fn uniformity_closed_forms() {
        let same = vec![vec![0.3, 0.4]; 10];
        assert!(uniformity(&same, 0).unwrap().value.abs() < 1e-15);
        let anti = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let u = uniformity(&anti, 0).unwrap();
        let want = -((2.0 + 2.0 * (-8.0f64).exp()) / 4.0).ln();
        assert!((u.value - want).abs() < 1e-12);
        assert!((u.value - 0.692812).abs() < 1e-6);
        assert!(uniformity(&anti[..1], 0).is_err());
    }

    #[test]
    fn sampled_uniformity_tracks_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let feats: Vec<Vec<f64>> = (0..6000)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let approx = uniformity(&feats, 1).unwrap();
        let se = approx.std_error.unwrap();
        let exact = uniformity(&feats[..5000], 1).unwrap();
        assert!(exact.std_error.is_none());
        assert!((approx.value - exact.value).abs() < 10.0 * se + 0.01);
    }

    #[test]
    fn timing_rejects_bad_counts() {
        assert!(timing_scaling(&[], TimedOp::DistanceMatrices, &TimingConfig::default()).is_err());
        assert!(timing_scaling(&[5, 2], TimedOp::DistanceMatrices, &TimingConfig::default()).is_err());
        let rows = timing_scaling(&[10, 20], TimedOp::DistanceMatrices, &TimingConfig::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.count).collect::<Vec<_>>(), vec![10, 20]);
    }
}
