//! Instruction-following data generation: render each segment from several
//! azimuths, fill a randomly chosen prompt template, ask the chat endpoint
//! for a response, and package the result as one JSON line per sample.

use std::io::Write;
use std::path::{Path, PathBuf};

use flowquery_core::descriptor::Segment;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chat::ChatClient;
use crate::error::{BridgeError, Result};
use crate::render::{render_views, save_views};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Description,
    Reasoning,
}

/// A prompt with `{n_views}` and `{segment_id}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub kind: TemplateKind,
    pub text: String,
}

impl Template {
    pub fn new(id: &str, kind: TemplateKind, text: &str) -> Self {
        Self { id: id.into(), kind, text: text.into() }
    }

    pub fn fill(&self, n_views: usize, segment_id: u64) -> String {
        self.text.replace("{n_views}", &n_views.to_string()).replace("{segment_id}", &segment_id.to_string())
    }
}

/// A small representative collection.
pub fn default_templates() -> Vec<Template> {
    vec![
        Template::new(
            "describe-shape",
            TemplateKind::Description,
            "The {n_views} images show one streamline segment from evenly spaced viewing angles around the \
             vertical axis. Describe its shape and the flow pattern it suggests.",
        ),
        Template::new(
            "describe-features",
            TemplateKind::Description,
            "Given these {n_views} views of a streamline segment, list the notable flow features it exhibits, \
             such as rotation, straight transport, convergence or divergence.",
        ),
        Template::new(
            "reason-origin",
            TemplateKind::Reasoning,
            "These {n_views} views show a streamline segment from a steady 3D flow. Reason step by step about \
             which underlying flow structure could produce this trajectory.",
        ),
        Template::new(
            "reason-neighborhood",
            TemplateKind::Reasoning,
            "Looking at this streamline segment from {n_views} angles, infer how nearby fluid parcels would \
             move and explain your reasoning.",
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub template_id: String,
    /// Paths of the rendered PNG views.
    pub views: Vec<String>,
    pub instruction: String,
    /// `None` in dry-run mode.
    pub response: Option<String>,
    pub segment_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub seed: u64,
    pub n_views: usize,
    pub image_size: u32,
    pub out_dir: PathBuf,
    /// Emit prompts without contacting the chat endpoint.
    pub dry_run: bool,
    /// Upper bound on concurrent chat calls.
    pub parallelism: usize,
}

impl GenOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { seed: 0, n_views: 3, image_size: 256, out_dir: out_dir.into(), dry_run: false, parallelism: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenReport {
    pub samples: Vec<InstructionSample>,
    /// Segment id and error text for every sample whose chat call failed.
    pub failures: Vec<(u64, String)>,
}

struct Job<'a> {
    seg: &'a Segment,
    template: &'a Template,
}

/// Generates one sample per segment. Template choice depends only on the
/// seed and segment order; chat failures are recorded and skipped.
pub fn gen_instruction_data(
    segments: &[Segment],
    templates: &[Template],
    client: Option<&ChatClient>,
    opts: &GenOptions,
) -> Result<GenReport> {
    if templates.is_empty() {
        return Err(BridgeError::BadInput("no prompt templates".into()));
    }
    if opts.n_views == 0 {
        return Err(BridgeError::BadInput("at least one view is required".into()));
    }
    let client = if opts.dry_run {
        None
    } else {
        Some(client.filter(|c| c.is_configured()).ok_or_else(|| {
            BridgeError::ServiceUnavailable("instruction generation needs a chat endpoint; use dry-run to emit prompts only".into())
        })?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let jobs: Vec<Job> = segments
        .iter()
        .map(|seg| Job { seg, template: &templates[rng.random_range(0..templates.len())] })
        .collect();
    let image_dir = opts.out_dir.join("views");

    let mut report = GenReport::default();
    for chunk in jobs.chunks(opts.parallelism.max(1)) {
        let results: Vec<Result<(InstructionSample, Option<String>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|job| s.spawn(|| run_job(job, client, opts, &image_dir)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("generation worker panicked")).collect()
        });
        for (job, r) in chunk.iter().zip(results) {
            let (sample, failure) = r?;
            match failure {
                Some(msg) => {
                    tracing::warn!(segment = job.seg.id, error = %msg, "chat call failed");
                    report.failures.push((job.seg.id, msg));
                }
                None => report.samples.push(sample),
            }
        }
    }
    Ok(report)
}

/// Rendering and file errors abort the batch; chat errors come back as a
/// failure message.
fn run_job(
    job: &Job,
    client: Option<&ChatClient>,
    opts: &GenOptions,
    image_dir: &Path,
) -> Result<(InstructionSample, Option<String>)> {
    let views = render_views(job.seg, opts.n_views, opts.image_size)?;
    let paths = save_views(&views, image_dir, &format!("seg{}", job.seg.id))?;
    let instruction = job.template.fill(opts.n_views, job.seg.id);
    let mut sample = InstructionSample {
        template_id: job.template.id.clone(),
        views: paths.iter().map(|p| p.display().to_string()).collect(),
        instruction,
        response: None,
        segment_ids: vec![job.seg.id],
    };
    let Some(client) = client else {
        return Ok((sample, None));
    };
    let pngs = views.iter().map(|v| v.png_bytes()).collect::<Result<Vec<_>>>()?;
    match client.complete_with_images(&sample.instruction, &pngs) {
        Ok(text) => {
            sample.response = Some(text);
            Ok((sample, None))
        }
        Err(e) => Ok((sample, Some(e.to_string()))),
    }
}

pub fn write_jsonl(samples: &[InstructionSample], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s).map_err(|e| BridgeError::Io(e.into()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<InstructionSample>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| BridgeError::BadInput(format!("{}: {e}", path.display()))))
        .collect()
}

/// Sorted indices of `round(fraction · n)` samples picked for manual review.
pub fn sample_review(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(BridgeError::BadInput(format!("review fraction must be in [0, 1], got {fraction}")));
    }
    let k = ((n as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}
