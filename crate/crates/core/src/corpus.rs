//! Labeled segment corpora drawn from the synthetic fields, used by the
//! probe, the reconstruction benchmark and the toy caption matcher.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{sample_segments, SamplingConfig, Segment};
use crate::error::{bad_param, Result};
use crate::matcher::MatchSample;
use crate::field::{gen_synthetic, Bounds, CriticalKind, SyntheticKind, SyntheticParams};
use crate::tracer::{trace_with_id, Direction, TraceConfig};
use crate::Vec3;

/// One field recipe plus the box seeds are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSource {
    pub kind: SyntheticKind,
    pub params: SyntheticParams,
    pub seed_box: Bounds,
}

/// A class of segments pooled from one or more sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternClass {
    pub name: String,
    pub caption: String,
    pub sources: Vec<PatternSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub dims: [usize; 3],
    pub bounds: Bounds,
    pub trace: TraceConfig,
    pub sampling: SamplingConfig,
    /// Streamlines traced per source and round.
    pub seeds_per_round: usize,
    pub max_rounds: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dims: [33, 33, 33],
            bounds: Bounds { min: [-2.0; 3], max: [2.0; 3] },
            trace: TraceConfig { step: 0.02, max_steps: 400, min_speed: 1e-3, direction: Direction::Both },
            sampling: SamplingConfig { levels: 2, max_len: 4.0, overlap: 0.5, min_points: 8 },
            seeds_per_round: 16,
            max_rounds: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegments {
    pub segments: Vec<Segment>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub captions: Vec<String>,
}

impl LabeledSegments {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

fn cube(lo: f64, hi: f64) -> Bounds {
    Bounds { min: [lo; 3], max: [hi; 3] }
}

fn source(kind: SyntheticKind, params: SyntheticParams, seed_box: Bounds) -> PatternSource {
    PatternSource { kind, params, seed_box }
}

fn swirl_params() -> SyntheticParams {
    SyntheticParams { pitch: 0.1, swirl_separation: 0.8, swirl_core_radius: 0.6, ..Default::default() }
}

/// Open archetypes only; centers would duplicate the swirl loops.
fn open_critical_params() -> SyntheticParams {
    SyntheticParams {
        critical_kinds: vec![CriticalKind::Saddle, CriticalKind::Node],
        ..Default::default()
    }
}

fn swirl_box() -> Bounds {
    Bounds { min: [-1.0, -0.6, -1.5], max: [1.0, 0.6, 1.5] }
}

/// The four probe classes: uniform, rotor-helix, critical_points, two_swirls.
pub fn probe_classes() -> Vec<PatternClass> {
    let p = SyntheticParams::default();
    vec![
        PatternClass {
            name: "uniform".into(),
            caption: "straight laminar flow".into(),
            sources: vec![source(SyntheticKind::Uniform, p.clone(), cube(-1.9, 1.9))],
        },
        PatternClass {
            name: "rotor_helix".into(),
            caption: "rotating flow around an axis".into(),
            sources: vec![
                source(SyntheticKind::Rotor, p.clone(), cube(-1.4, 1.4)),
                source(SyntheticKind::Helix, p.clone(), cube(-1.4, 1.4)),
            ],
        },
        PatternClass {
            name: "critical_points".into(),
            caption: "flow around sources sinks and saddles".into(),
            sources: vec![source(SyntheticKind::CriticalPoints, open_critical_params(), cube(-1.6, 1.6))],
        },
        PatternClass {
            name: "two_swirls".into(),
            caption: "two counter rotating swirls".into(),
            sources: vec![source(SyntheticKind::TwoSwirls, swirl_params(), swirl_box())],
        },
    ]
}

/// Five single-source classes, one caption each.
pub fn toy_classes() -> Vec<PatternClass> {
    let p = SyntheticParams::default();
    let helix = SyntheticParams { pitch: 1.0, ..p.clone() };
    // both fields are axisymmetric, so a slab along +x covers every radius
    let rotor_band = Bounds { min: [0.4, -0.3, -1.0], max: [1.4, 0.3, 1.0] };
    let helix_band = Bounds { min: [0.8, -0.3, -1.0], max: [1.4, 0.3, 1.0] };
    vec![
        PatternClass {
            name: "uniform".into(),
            caption: "straight laminar flow".into(),
            sources: vec![source(SyntheticKind::Uniform, p.clone(), cube(-1.9, 1.9))],
        },
        PatternClass {
            name: "rotor".into(),
            caption: "circular rotating flow".into(),
            sources: vec![source(SyntheticKind::Rotor, p.clone(), rotor_band)],
        },
        PatternClass {
            name: "helix".into(),
            caption: "helical spiral rising along an axis".into(),
            sources: vec![source(SyntheticKind::Helix, helix, helix_band)],
        },
        PatternClass {
            name: "critical_points".into(),
            caption: "sources sinks and saddle points".into(),
            sources: vec![source(SyntheticKind::CriticalPoints, open_critical_params(), cube(-1.6, 1.6))],
        },
        PatternClass {
            name: "two_swirls".into(),
            caption: "two counter rotating vortices".into(),
            sources: vec![source(SyntheticKind::TwoSwirls, swirl_params(), swirl_box())],
        },
    ]
}

/// Collects `per_class` segments for every class. Each round builds fresh
/// fields (critical points are redrawn), traces seeds from every source, and
/// pools the sampled segments; the final pick is a seeded draw from the pool.
/// Segment ids are consecutive in the returned order, class by class.
pub fn build_corpus(
    classes: &[PatternClass],
    per_class: usize,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<LabeledSegments> {
    if classes.is_empty() || per_class == 0 {
        return Err(bad_param("corpus needs at least one class and one segment per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LabeledSegments {
        segments: Vec::with_capacity(classes.len() * per_class),
        labels: Vec::new(),
        class_names: classes.iter().map(|c| c.name.clone()).collect(),
        captions: classes.iter().map(|c| c.caption.clone()).collect(),
    };
    let mut next_line = 0u64;
    for (label, class) in classes.iter().enumerate() {
        if class.sources.is_empty() {
            return Err(bad_param(format!("class `{}` has no sources", class.name)));
        }
        let mut pool: Vec<Segment> = Vec::new();
        let mut rounds = 0;
        // oversample so the final pick mixes many streamlines
        while pool.len() < 3 * per_class {
            if rounds == cfg.max_rounds {
                if pool.len() >= per_class {
                    break;
                }
                return Err(bad_param(format!(
                    "class `{}` yielded only {} segments after {rounds} rounds",
                    class.name,
                    pool.len()
                )));
            }
            rounds += 1;
            for src in &class.sources {
                let field = gen_synthetic(src.kind, cfg.dims, cfg.bounds, &src.params, rng.random())?;
                for _ in 0..cfg.seeds_per_round {
                    let p = random_point(&src.seed_box, &mut rng);
                    let line = trace_with_id(&field, p, &cfg.trace, next_line)?;
                    next_line += 1;
                    pool.extend(sample_segments(&line, &cfg.sampling)?);
                }
            }
        }
        pool.shuffle(&mut rng);
        for mut seg in pool.into_iter().take(per_class) {
            seg.id = out.segments.len() as u64;
            out.segments.push(seg);
            out.labels.push(label);
        }
    }
    Ok(out)
}

fn random_point(b: &Bounds, rng: &mut impl Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(b.min[0]..=b.max[0]),
        rng.random_range(b.min[1]..=b.max[1]),
        rng.random_range(b.min[2]..=b.max[2]),
    )
}

pub fn probe_corpus(per_class: usize, seed: u64) -> Result<LabeledSegments> {
    build_corpus(&probe_classes(), per_class, &CorpusConfig::default(), seed)
}

/// Single-level windows keep each toy class at one scale.
pub fn toy_config() -> CorpusConfig {
    let mut cfg = CorpusConfig::default();
    cfg.sampling.levels = 1;
    cfg.sampling.max_len = 3.0;
    cfg
}

pub fn toy_corpus(per_class: usize, seed: u64) -> Result<LabeledSegments> {
    build_corpus(&toy_classes(), per_class, &toy_config(), seed)
}

/// Splits every class into train and held-out rows: the first
/// `round(train_frac · n_c)` of each class after a seeded shuffle train.
pub fn split_by_class(labels: &[usize], train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    crate::eval::stratified_split(labels, train_frac, seed)
}

/// Caption samples for matcher training: for each class, `per_class`
/// samples pairing the class caption with `set_size` distinct rows drawn
/// from that class's entries in `rows`.
pub fn caption_samples(
    corpus: &LabeledSegments,
    rows: &[usize],
    per_class: usize,
    set_size: usize,
    seed: u64,
) -> Result<Vec<MatchSample>> {
    if set_size == 0 {
        return Err(bad_param("set size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * corpus.captions.len());
    for (label, caption) in corpus.captions.iter().enumerate() {
        let mut members: Vec<usize> = rows.iter().copied().filter(|&r| corpus.labels[r] == label).collect();
        if members.len() < set_size {
            return Err(bad_param(format!("class `{caption}` has {} rows, need {set_size}", members.len())));
        }
        for _ in 0..per_class {
            let (pick, _) = members.partial_shuffle(&mut rng, set_size);
            out.push(MatchSample { caption: caption.clone(), members: pick.to_vec() });
        }
    }
    Ok(out)
}
