//! `flowquery` subcommands. Exit codes: 0 success, 1 runtime error, 2 usage
//! error. Reports go to stdout as one JSON object per line.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowquery_bridge::instruct::{default_templates, gen_instruction_data, sample_review, write_jsonl, GenOptions, Template};
use flowquery_bridge::{ChatClient, EmbeddingServiceConfig, ServiceEmbedder};
use flowquery_core::corpus::{caption_samples, split_by_class, toy_corpus};
use flowquery_core::descriptor::{describe_all, export_segments, import_segments, read_dm, sample_all, write_dm, DistanceMatrix, SamplingConfig, Segment};
use flowquery_core::encoder::{load_checkpoint, save_checkpoint, train_dae, DaeModel, DaeTrainConfig};
use flowquery_core::eval::{linear_probe, timing_scaling, uniformity, LabeledFeatureSet, ProbeConfig, TimedOp, TimingConfig};
use flowquery_core::field::{gen_synthetic, load_raw, save_raw, Bounds, SyntheticKind, SyntheticParams};
use flowquery_core::matcher::{
    build_index, in_batch_top1, load_index, load_matcher, save_index, save_matcher, train_matcher, HashedEmbedder,
    MatchSample, MatcherConfig, TextEmbedder, TEXT_DIM,
};
use flowquery_core::tracer::{export_streamlines, import_streamlines, seed_uniform, trace_all, Direction, TraceConfig};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ServerConfig;
use crate::state::AppState;

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Debug, Parser)]
#[command(name = "flowquery", version, about = "Streamline pattern encoding and text-to-flow retrieval")]
pub struct Cli {
    /// Log filter such as `info` or `flowquery_server=debug`; RUST_LOG also works.
    #[arg(long, global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an analytic vector field and write `<out>.meta`/`<out>.vec`.
    GenField(GenFieldArgs),
    /// Trace RK4 streamlines from uniformly drawn seeds.
    Trace(TraceArgs),
    /// Cut streamlines into multi-level segments and write their descriptors.
    Sample(SampleArgs),
    /// Train the denoising encoder on descriptor files.
    TrainEncoder(TrainEncoderArgs),
    /// Encode descriptors into latent vectors, one row per line.
    Encode(EncodeArgs),
    /// Linear-probe classification accuracy of latent features.
    EvalProbe(EvalProbeArgs),
    /// Hypersphere uniformity of latent features.
    EvalUniformity(EvalUniformityArgs),
    /// Wall-clock scaling of descriptor computation or encoder training.
    BenchScaling(BenchScalingArgs),
    /// Train the caption-to-segment matcher.
    TrainMatcher(TrainMatcherArgs),
    /// Pre-encode segments into a query index.
    BuildIndex(BuildIndexArgs),
    /// Print the top-k segments for a text query as `rank score segment_id`.
    Query(QueryArgs),
    /// Render segments and generate instruction-following data.
    GenData(GenDataArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenFieldArgs {
    /// uniform, rotor, helix, critical_points or two_swirls.
    #[arg(long)]
    kind: SyntheticKind,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [33, 33, 33])]
    dims: Vec<usize>,
    /// Lower corner of the cubic domain.
    #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
    min: f64,
    /// Upper corner of the cubic domain.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    max: f64,
    #[arg(long, default_value_t = 0.5)]
    pitch: f64,
    #[arg(long, default_value_t = 1.0)]
    swirl_separation: f64,
    #[arg(long, default_value_t = 0.6)]
    swirl_core_radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Forward,
    Backward,
    Both,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Forward => Direction::Forward,
            DirectionArg::Backward => Direction::Backward,
            DirectionArg::Both => Direction::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Field stem written by gen-field.
    #[arg(long)]
    field: PathBuf,
    #[arg(long, default_value_t = 200)]
    seeds: usize,
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    #[arg(long, default_value_t = 400)]
    max_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    min_speed: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    direction: DirectionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    streamlines: PathBuf,
    #[arg(long, default_value_t = 2)]
    levels: u32,
    #[arg(long, default_value_t = 4.0)]
    max_len: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long, default_value_t = 8)]
    min_points: usize,
    #[arg(long)]
    out_segments: PathBuf,
    #[arg(long)]
    out_dm: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainEncoderArgs {
    /// Descriptor file; repeat to train on several.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    latent_dim: usize,
    /// Train a plain autoencoder (no noise).
    #[arg(long)]
    plain: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalProbeArgs {
    /// Latent rows written by `encode`.
    #[arg(long, requires = "labels", conflicts_with = "synthetic")]
    features: Option<PathBuf>,
    /// One integer class label per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Build the four-class synthetic corpus, train encoders and probe them.
    #[arg(long, required_unless_present = "features")]
    synthetic: bool,
    #[arg(long, default_value_t = 600)]
    per_class: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [128, 16])]
    latent_dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    dae_epochs: usize,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalUniformityArgs {
    #[arg(long)]
    features: PathBuf,
    /// Pair sampling seed (only used above the exact-evaluation size).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OpArg {
    DistanceMatrices,
    DaeTraining,
}

#[derive(Debug, Args)]
pub struct BenchScalingArgs {
    #[arg(long, value_enum, default_value_t = OpArg::DistanceMatrices)]
    op: OpArg,
    #[arg(long, value_delimiter = ',', default_values_t = [10_000, 20_000, 40_000])]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    dae_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainMatcherArgs {
    #[arg(long)]
    encoder: PathBuf,
    /// Train on the generated five-class caption corpus.
    #[arg(long, conflicts_with_all = ["captions", "segments"])]
    toy: bool,
    /// JSON lines of `{"caption": ..., "segment_ids": [...]}`.
    #[arg(long, requires = "segments", required_unless_present = "toy")]
    captions: Option<PathBuf>,
    #[arg(long)]
    segments: Option<PathBuf>,
    /// Toy corpus size per class.
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    /// Toy caption samples per class.
    #[arg(long, default_value_t = 16)]
    samples_per_class: usize,
    /// Toy segments per caption sample.
    #[arg(long, default_value_t = 8)]
    set_size: usize,
    /// Write the toy corpus segments here (labels go to `<file>.labels`).
    #[arg(long, requires = "toy")]
    save_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    #[arg(long, default_value_t = 128)]
    common_dim: usize,
    /// Width of the hashed text embedding.
    #[arg(long, default_value_t = TEXT_DIM)]
    text_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    encoder: PathBuf,
    #[arg(long)]
    matcher: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Use a remote embedding service instead of the hashed embedder.
    #[arg(long)]
    embed_endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Use a seeded subset of this many segments.
    #[arg(long)]
    count: Option<usize>,
    /// JSON array of templates; defaults to the built-in collection.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    views: usize,
    #[arg(long, default_value_t = 256)]
    size: u32,
    /// Emit prompts and renders without calling the chat endpoint.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Fraction of samples listed in `review.txt` for manual inspection.
    #[arg(long)]
    sample_review: Option<f64>,
    /// Service config file whose `[chat]` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    chat_endpoint: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    port: Option<u16>,
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    init_logging(cli.log.as_deref(), default_level);
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_logging(filter: Option<&str>, default_level: &str) {
    use tracing_subscriber::EnvFilter;
    let filter = match filter {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)),
    };
    let ansi = std::io::IsTerminal::is_terminal(&std::io::stderr());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_ansi(ansi).with_writer(std::io::stderr).try_init();
}

fn emit(v: &impl Serialize) -> CliResult {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn execute(cmd: Command) -> CliResult {
    match cmd {
        Command::GenField(a) => gen_field(a),
        Command::Trace(a) => trace(a),
        Command::Sample(a) => sample_cmd(a),
        Command::TrainEncoder(a) => train_encoder(a),
        Command::Encode(a) => encode(a),
        Command::EvalProbe(a) => eval_probe(a),
        Command::EvalUniformity(a) => eval_uniformity(a),
        Command::BenchScaling(a) => bench_scaling(a),
        Command::TrainMatcher(a) => train_matcher_cmd(a),
        Command::BuildIndex(a) => build_index_cmd(a),
        Command::Query(a) => query(a),
        Command::GenData(a) => gen_data(a),
        Command::Serve(a) => serve(a),
    }
}

fn gen_field(a: GenFieldArgs) -> CliResult {
    let dims = [a.dims[0], a.dims[1], a.dims[2]];
    let bounds = Bounds::new([a.min; 3], [a.max; 3])?;
    let params = SyntheticParams {
        pitch: a.pitch,
        swirl_separation: a.swirl_separation,
        swirl_core_radius: a.swirl_core_radius,
        ..Default::default()
    };
    let field = gen_synthetic(a.kind, dims, bounds, &params, a.seed)?;
    save_raw(&field, &a.out)?;
    emit(&json!({ "command": "gen-field", "kind": a.kind.name(), "dims": dims, "out": a.out }))
}

fn trace(a: TraceArgs) -> CliResult {
    let field = load_raw(&a.field)?;
    let seeds = seed_uniform(field.bounds(), a.seeds, a.seed)?;
    let cfg = TraceConfig { step: a.step, max_steps: a.max_steps, min_speed: a.min_speed, direction: a.direction.into() };
    let lines = trace_all(&field, &seeds, &cfg)?;
    std::fs::write(&a.out, export_streamlines(&lines))?;
    let points: usize = lines.iter().map(|l| l.points.len()).sum();
    emit(&json!({ "command": "trace", "streamlines": lines.len(), "points": points, "out": a.out }))
}

fn sample_cmd(a: SampleArgs) -> CliResult {
    let lines = import_streamlines(&std::fs::read_to_string(&a.streamlines)?)?;
    let cfg = SamplingConfig { levels: a.levels, max_len: a.max_len, overlap: a.overlap, min_points: a.min_points };
    let segments = sample_all(&lines, &cfg)?;
    if segments.is_empty() {
        return Err("sampling produced no segments; lower --max-len or --min-points".into());
    }
    let dms = describe_all(&segments)?;
    std::fs::write(&a.out_segments, export_segments(&segments))?;
    write_dm(&a.out_dm, &dms)?;
    emit(&json!({ "command": "sample", "segments": segments.len(), "out_segments": a.out_segments, "out_dm": a.out_dm }))
}

fn train_encoder(a: TrainEncoderArgs) -> CliResult {
    let mut data: Vec<DistanceMatrix> = Vec::new();
    for p in &a.data {
        data.extend(read_dm(p)?);
    }
    let mut cfg =
        DaeTrainConfig { epochs: a.epochs, batch: a.batch, lr: a.lr, latent_dim: a.latent_dim, seed: a.seed, ..Default::default() };
    if a.plain {
        cfg = cfg.autoencoder();
    }
    let (model, report) = train_dae(&data, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    emit(&json!({
        "command": "train-encoder",
        "samples": data.len(),
        "steps": report.steps,
        "first_loss": report.epoch_losses.first(),
        "final_loss": report.epoch_losses.last(),
        "out": a.out,
    }))
}

fn latents_of(model: &DaeModel, dms: &[DistanceMatrix]) -> CliResult<Vec<Vec<f64>>> {
    let z = model.encode_all(dms)?;
    Ok(z.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// One row per line, space separated, in shortest round-trip form.
pub fn write_rows(path: &Path, rows: &[Vec<f64>]) -> CliResult {
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::parse).collect::<Result<Vec<f64>, _>>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(format!("{}: rows have different lengths", path.display()).into());
    }
    Ok(rows)
}

fn encode(a: EncodeArgs) -> CliResult {
    let model = load_checkpoint(&a.model)?;
    let rows = latents_of(&model, &read_dm(&a.data)?)?;
    write_rows(&a.out, &rows)?;
    emit(&json!({ "command": "encode", "rows": rows.len(), "latent_dim": model.latent_dim(), "out": a.out }))
}

fn eval_probe(a: EvalProbeArgs) -> CliResult {
    let probe = ProbeConfig { epochs: a.epochs, lr: a.lr, seed: a.seed, ..Default::default() };
    if let Some(features) = &a.features {
        let rows = read_rows(features)?;
        let labels_path = a.labels.as_ref().ok_or("--labels is required with --features")?;
        let labels: Vec<usize> = std::fs::read_to_string(labels_path)?
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{}: {e}", labels_path.display()))?;
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let names = (0..classes).map(|c| format!("class{c}")).collect();
        let set = LabeledFeatureSet::new(rows, labels, names)?;
        let r = linear_probe(&set, a.split, &probe)?;
        return emit(&json!({ "command": "eval-probe", "accuracy": r.accuracy, "train_accuracy": r.train_accuracy, "test_size": r.test_size }));
    }
    let corpus = flowquery_core::corpus::probe_corpus(a.per_class, a.seed)?;
    let dms = describe_all(&corpus.segments)?;
    for &dim in &a.latent_dims {
        let cfg = DaeTrainConfig { epochs: a.dae_epochs, latent_dim: dim, seed: a.seed, ..Default::default() };
        let (model, _) = train_dae(&dms, &cfg)?;
        let set = LabeledFeatureSet::new(latents_of(&model, &dms)?, corpus.labels.clone(), corpus.class_names.clone())?;
        let r = linear_probe(&set, a.split, &probe)?;
        emit(&json!({
            "command": "eval-probe",
            "latent_dim": dim,
            "segments": corpus.len(),
            "accuracy": r.accuracy,
            "train_accuracy": r.train_accuracy,
            "confusion": r.confusion,
        }))?;
    }
    Ok(())
}

fn eval_uniformity(a: EvalUniformityArgs) -> CliResult {
    let rows = read_rows(&a.features)?;
    let u = uniformity(&rows, a.seed)?;
    emit(&json!({ "command": "eval-uniformity", "n": rows.len(), "value": u.value, "std_error": u.std_error, "pairs": u.pairs }))
}

fn bench_scaling(a: BenchScalingArgs) -> CliResult {
    let op = match a.op {
        OpArg::DistanceMatrices => TimedOp::DistanceMatrices,
        OpArg::DaeTraining => TimedOp::DaeTraining,
    };
    let cpus = std::thread::available_parallelism().map_or(1, usize::from);
    emit(&json!({
        "record": "environment",
        "os": std::env::consts::OS,
        "arch": std::env::consts::ARCH,
        "cpus": cpus,
        "version": env!("CARGO_PKG_VERSION"),
        "debug_assertions": cfg!(debug_assertions),
        "repeats": a.repeats,
    }))?;
    let cfg = TimingConfig { repeats: a.repeats, dae_epochs: a.dae_epochs, seed: a.seed };
    for row in timing_scaling(&a.counts, op, &cfg)? {
        emit(&json!({ "record": "timing", "op": row.op, "count": row.count, "seconds": row.seconds }))?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CaptionRecord {
    caption: String,
    segment_ids: Vec<u64>,
}

fn train_matcher_cmd(a: TrainMatcherArgs) -> CliResult {
    let encoder = load_checkpoint(&a.encoder)?;
    let embedder = HashedEmbedder::new(a.text_dim)?;
    let cfg = MatcherConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        tau: a.tau,
        common_dim: a.common_dim,
        seed: a.seed,
    };
    if a.toy {
        let corpus = toy_corpus(a.per_class, a.seed)?;
        let latents = latents_of(&encoder, &describe_all(&corpus.segments)?)?;
        let (train, test) = split_by_class(&corpus.labels, 0.8, a.seed);
        let set = a.set_size.min(train.len() / corpus.captions.len());
        let samples = caption_samples(&corpus, &train, a.samples_per_class, set, a.seed)?;
        let (model, report) = train_matcher(&samples, &latents, &embedder, &cfg)?;
        let held_set = 4.min(test.len() / corpus.captions.len()).max(1);
        let held = caption_samples(&corpus, &test, 4, held_set, a.seed.wrapping_add(77))?;
        let top1 = in_batch_top1(&model, &held, &latents, &embedder, corpus.captions.len())?;
        save_matcher(&model, &a.out)?;
        if let Some(p) = &a.save_corpus {
            std::fs::write(p, export_segments(&corpus.segments))?;
            let labels: String = corpus.labels.iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(labels_path(p), labels)?;
        }
        return emit(&json!({
            "command": "train-matcher",
            "corpus": "toy",
            "samples": samples.len(),
            "initial_loss": report.initial_loss,
            "final_loss": report.epoch_losses.last(),
            "held_out_top1": top1,
            "out": a.out,
        }));
    }
    let seg_path = a.segments.as_ref().ok_or("--segments is required with --captions")?;
    let cap_path = a.captions.as_ref().ok_or("--captions or --toy is required")?;
    let segments = import_segments(&std::fs::read_to_string(seg_path)?)?;
    let rows: HashMap<u64, usize> = segments.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut samples = Vec::new();
    for (n, line) in std::fs::read_to_string(cap_path)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: CaptionRecord =
            serde_json::from_str(line).map_err(|e| format!("{}:{}: {e}", cap_path.display(), n + 1))?;
        let members = rec
            .segment_ids
            .iter()
            .map(|id| rows.get(id).copied().ok_or_else(|| format!("caption line {}: unknown segment {id}", n + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(MatchSample { caption: rec.caption, members });
    }
    let latents = latents_of(&encoder, &describe_all(&segments)?)?;
    let (model, report) = train_matcher(&samples, &latents, &embedder, &cfg)?;
    save_matcher(&model, &a.out)?;
    emit(&json!({
        "command": "train-matcher",
        "corpus": "captions",
        "samples": samples.len(),
        "initial_loss": report.initial_loss,
        "final_loss": report.epoch_losses.last(),
        "out": a.out,
    }))
}

fn labels_path(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

fn build_index_cmd(a: BuildIndexArgs) -> CliResult {
    let segments = import_segments(&std::fs::read_to_string(&a.segments)?)?;
    let encoder = load_checkpoint(&a.encoder)?;
    let matcher = load_matcher(&a.matcher)?;
    let index = build_index(&segments, &encoder, &matcher)?;
    save_index(&index, &a.out)?;
    emit(&json!({ "command": "build-index", "segments": index.len(), "fingerprint": index.fingerprint_hex(), "out": a.out }))
}

fn query(a: QueryArgs) -> CliResult {
    let index = load_index(&a.index)?;
    let embedder: Box<dyn TextEmbedder> = match a.embed_endpoint {
        Some(endpoint) => Box::new(ServiceEmbedder::new(&EmbeddingServiceConfig {
            endpoint: Some(endpoint),
            dim: index.text_dim(),
            ..Default::default()
        })?),
        None => Box::new(HashedEmbedder::new(index.text_dim())?),
    };
    for hit in index.query(embedder.as_ref(), &a.text, a.k)? {
        println!("{} {:.6} {}", hit.rank, hit.score, hit.segment_id);
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> CliResult {
    let mut segments = import_segments(&std::fs::read_to_string(&a.segments)?)?;
    if let Some(n) = a.count {
        if n > segments.len() {
            return Err(format!("--count {n} exceeds the {} available segments", segments.len()).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut pick = sample(&mut rng, segments.len(), n).into_vec();
        pick.sort_unstable();
        segments = pick.into_iter().map(|i| segments[i].clone()).collect::<Vec<Segment>>();
    }
    let templates: Vec<Template> = match &a.templates {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => default_templates(),
    };
    let mut chat = match &a.config {
        Some(p) => ServerConfig::load(Some(p))?.chat,
        None => ServerConfig::load(None)?.chat,
    };
    if a.chat_endpoint.is_some() {
        chat.endpoint = a.chat_endpoint.clone();
    }
    let client = ChatClient::new(chat)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let opts = GenOptions {
        seed: a.seed,
        n_views: a.views,
        image_size: a.size,
        out_dir: a.out_dir.clone(),
        dry_run: a.dry_run,
        parallelism: a.parallelism,
    };
    let report = gen_instruction_data(&segments, &templates, Some(&client), &opts)?;
    let dataset = a.out_dir.join("instructions.jsonl");
    write_jsonl(&report.samples, &dataset)?;
    let mut review = Vec::new();
    if let Some(f) = a.sample_review {
        let idx = sample_review(report.samples.len(), f, a.seed)?;
        review = idx.iter().map(|&i| report.samples[i].segment_ids[0]).collect();
        let text: String = review.iter().map(|id| format!("{id}\n")).collect();
        std::fs::write(a.out_dir.join("review.txt"), text)?;
    }
    for (id, msg) in &report.failures {
        eprintln!("segment {id}: {msg}");
    }
    emit(&json!({
        "command": "gen-data",
        "samples": report.samples.len(),
        "failures": report.failures.len(),
        "dry_run": a.dry_run,
        "dataset": dataset,
        "review": review,
    }))
}

fn serve(a: ServeArgs) -> CliResult {
    let mut cfg = ServerConfig::load(a.config.as_deref())?;
    if let Some(d) = a.data_dir {
        cfg.data_dir = d;
    }
    if let Some(h) = a.host {
        cfg.host = h;
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    // built outside the runtime; the blocking HTTP clients inside must not
    // be created or dropped on an async worker
    let state = Arc::new(AppState::from_config(&cfg)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::serve(cfg, state.clone()))?;
    drop(rt);
    drop(state);
    Ok(())
}
