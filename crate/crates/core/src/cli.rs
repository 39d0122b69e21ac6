//! Command-line workflows: matching benchmark, evaluation, decoder
//! simulation, scene generation and crop augmentation.
//!
//! Exit codes: 0 success, 1 invalid input or flags, 2 a verification
//! failed, 3 file I/O.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::assignment::{build_match_cost, solve_exact, Assignment, MatchWeights, Prediction};
use crate::bench::{self, instance_rng, BenchRow, BenchSummary, InstanceKind, MatchInstance};
use crate::datasets::{
    crop_augment, generate_scenes, load_odgt, min_retention, scene_statistics, write_odgt, CountDist, CropSpec,
    DatasetError, ImageRecord, SceneSpec, SceneStats,
};
use crate::decoder::{
    attention_diagnostics, finite_difference_check, AttentionReport, Decoder, DecoderConfig, DecoderError,
    DecoderParams, FeatureGrid, GradCheckReport, RefineMode,
};
use crate::evalmetrics::{evaluate, read_predictions, GtBox, ImageEval, MetricsError, MetricsReport};
use crate::geometry::{Annotation, BBox};
use crate::supervision::{plan_targets, routed_loss, routed_loss_gradients, TargetKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => CliError::Io(e.to_string()),
            other => invalid(other),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(e) => CliError::Io(e.to_string()),
            other => invalid(other),
        }
    }
}

impl From<DecoderError> for CliError {
    fn from(e: DecoderError) -> Self {
        invalid(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "pedset", version, about = "Crowd pedestrian set-prediction toolkit")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "PEDSET_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time exact and pruned matching on the same instances and check their costs agree.
    MatchBench(MatchBenchArgs),
    /// Score detections against odgt ground truth.
    Eval(EvalArgs),
    /// Run the decoder on a synthetic scene and report attention, losses and gradients.
    DecoderSim(DecoderSimArgs),
    /// Write synthetic crowd scenes as odgt.
    Gen(GenArgs),
    /// Write randomly cropped copies of an odgt dataset.
    Augment(AugmentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Random,
    Clustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoxKindArg {
    Full,
    Visible,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 2.0)]
    pub w_class: f64,
    #[arg(long, default_value_t = 5.0)]
    pub w_l1: f64,
    #[arg(long, default_value_t = 2.0)]
    pub w_giou: f64,
}

impl WeightArgs {
    fn weights(&self) -> Result<MatchWeights, CliError> {
        let w = MatchWeights { class: self.w_class, l1: self.w_l1, giou: self.w_giou };
        if [w.class, w.l1, w.giou].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("loss weights must be finite and non-negative"));
        }
        Ok(w)
    }
}

#[derive(Debug, Args)]
pub struct MatchBenchArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Clustered)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 400)]
    pub n_pred: usize,
    #[arg(long, default_value_t = 100)]
    pub n_gt: usize,
    /// Nearest predictions kept per GT.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub k_candidates: u64,
    /// Timing repeats per solver; the best run counts.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Take GTs from an odgt file (one instance per image) instead of generating them.
    #[arg(long)]
    pub gts: Option<PathBuf>,
    /// Allowed total-cost difference between the two solvers.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Line-delimited `{image_id, score, box: [x, y, w, h]}` predictions.
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub gts: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Which annotated box detections are scored against.
    #[arg(long, value_enum, default_value_t = BoxKindArg::Full)]
    pub target: BoxKindArg,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecoderSimArgs {
    /// Decoder configuration as JSON; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub grid_side: Option<usize>,
    #[arg(long)]
    pub dq_layers: Option<usize>,
    #[arg(long)]
    pub rf_layers: Option<usize>,
    #[arg(long)]
    pub sampling_points: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub inverse_sigmoid: bool,
    /// Trailing layers supervised with full boxes; the rest use visible boxes.
    #[arg(long)]
    pub full_layers: Option<usize>,
    /// Persons in the synthetic scene.
    #[arg(long, default_value_t = 5)]
    pub persons: usize,
    /// Side of the square feature grid.
    #[arg(long, default_value_t = 16)]
    pub grid_size: usize,
    /// Noise added to the initial parameters.
    #[arg(long, default_value_t = 0.1)]
    pub perturb: f64,
    /// Compare reverse-mode gradients against central differences.
    #[arg(long)]
    pub grad_check: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub grad_step: f64,
    /// Largest relative gradient error accepted.
    #[arg(long, default_value_t = 1e-4)]
    pub grad_tolerance: f64,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 500)]
    pub images: usize,
    /// Scene parameters as JSON; missing fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Fail unless persons/img is within 10% and overlap pairs/img within 15% of the configured means.
    #[arg(long)]
    pub check_stats: bool,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Where to write the measured statistics (stdout by default).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Crops drawn per input image.
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    #[arg(long, default_value_t = 0.8)]
    pub min_retention: f64,
    #[arg(long, default_value_t = 0.5)]
    pub min_scale: f64,
    #[arg(long, default_value_t = 50)]
    pub max_retries: usize,
    #[arg(long)]
    pub clip_full_boxes: bool,
    /// Frame size `WIDTHxHEIGHT` for records that do not carry one.
    #[arg(long, value_parser = parse_frame)]
    pub frame: Option<[f64; 2]>,
    /// Re-measure retention on the output and fail on any violation.
    #[arg(long)]
    pub audit: bool,
}

fn parse_frame(s: &str) -> Result<[f64; 2], String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w: f64 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: f64 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
        return Err("frame sides must be positive".into());
    }
    Ok([w, h])
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::Io(e.to_string()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Annotations scaled into the unit square.
fn normalized(annotations: &[Annotation], [w, h]: [f64; 2]) -> Vec<Annotation> {
    let scale = |b: &BBox| {
        let [x0, y0, x1, y1] = b.corners();
        BBox::new(x0 / w, y0 / h, x1 / w, y1 / h).expect("scaled box stays valid")
    };
    annotations.iter().map(|a| Annotation { fbox: scale(&a.fbox), vbox: scale(&a.vbox), ..a.clone() }).collect()
}

#[derive(Serialize)]
struct BenchReport {
    summary: BenchSummary,
    rows: Vec<BenchRow>,
}

pub fn cmd_match_bench(args: &MatchBenchArgs, seed: u64) -> Result<(), CliError> {
    let weights = args.weights.weights()?;
    let k = args.k_candidates as usize;
    let instances: Vec<MatchInstance> = match &args.gts {
        Some(path) => {
            let records = load_odgt(path)?;
            let mut out = Vec::with_capacity(records.len());
            for (i, r) in records.iter().enumerate() {
                let size = r.size.ok_or_else(|| invalid(format!("image {} has no frame size", r.id)))?;
                let anns = normalized(&r.annotations().map_err(invalid)?, size);
                let gts: Vec<BBox> = anns.iter().filter(|a| !a.ignore).map(|a| a.fbox).collect();
                let preds = bench::predictions_around(&gts, args.n_pred.max(gts.len()), &mut instance_rng(seed, i));
                out.push(MatchInstance::from_parts(preds, gts, weights).map_err(invalid)?);
            }
            out
        }
        None => {
            if args.n_gt > args.n_pred {
                return Err(invalid("n-gt cannot exceed n-pred"));
            }
            let kind = match args.kind {
                KindArg::Random => InstanceKind::Random,
                KindArg::Clustered => InstanceKind::Clustered,
            };
            (0..args.instances)
                .map(|i| bench::generate_instance(kind, args.n_pred, args.n_gt, weights, &mut instance_rng(seed, i)))
                .collect::<Result<_, _>>()
                .map_err(invalid)?
        }
    };
    let rows: Vec<BenchRow> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| bench::time_instance(i, inst, k, args.repeats))
        .collect::<Result<_, _>>()
        .map_err(invalid)?;
    let summary = bench::summarize(&rows, args.tolerance);
    log::info!(
        "{} instances, median exact {} ns, median fast {} ns, speedup {:.2}",
        summary.instances,
        summary.median_exact_ns,
        summary.median_fast_ns,
        summary.median_speedup
    );
    let mismatches = summary.cost_mismatches;
    match args.format {
        ReportFormat::Json => emit_json(&BenchReport { summary, rows }, args.output.as_deref())?,
        ReportFormat::Csv => {
            let mut out = open_output(args.output.as_deref())?;
            bench::write_csv(&mut out, &rows).and_then(|_| out.flush()).map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    if mismatches > 0 {
        return Err(CliError::Verification(format!("{mismatches} instances where the pruned solver's cost differs")));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport, CliError> {
    if !(args.iou > 0.0 && args.iou <= 1.0) {
        return Err(invalid("iou must lie in (0, 1]"));
    }
    let records = load_odgt(&args.gts)?;
    let file = File::open(&args.preds).map_err(|e| CliError::Io(format!("{}: {e}", args.preds.display())))?;
    let mut preds = read_predictions(BufReader::new(file))?;
    let mut images = Vec::with_capacity(records.len());
    for r in &records {
        let gts = r
            .annotations()
            .map_err(invalid)?
            .into_iter()
            .map(|a| GtBox { bbox: if args.target == BoxKindArg::Full { a.fbox } else { a.vbox }, ignore: a.ignore })
            .collect();
        let detections = preds.remove(&r.id).unwrap_or_default();
        images.push(ImageEval { image_id: r.id.clone(), detections, gts });
    }
    if let Some(id) = preds.keys().next() {
        return Err(invalid(format!("predictions for image {id:?}, which has no ground truth")));
    }
    let report = evaluate(&images, args.iou)?;
    emit_json(&report, args.output.as_deref())?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct LayerLossReport {
    pub layer: usize,
    pub target: TargetKind,
    pub total: f64,
    pub class_term: f64,
    pub l1_term: f64,
    pub giou_term: f64,
    pub matched_queries: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct SelfAttentionCount {
    pub layer: usize,
    pub dense_queries: bool,
    pub pairs: usize,
    pub multiply_adds: u64,
}

#[derive(Debug, Serialize)]
pub struct DecoderSimReport {
    pub seed: u64,
    pub config: DecoderConfig,
    pub full_layers: usize,
    pub persons: usize,
    pub total_loss: f64,
    pub losses: Vec<LayerLossReport>,
    pub self_attention: Vec<SelfAttentionCount>,
    pub diagnostics: AttentionReport,
    pub grad_check: Option<GradCheckReport>,
}

fn decoder_config(args: &DecoderSimArgs) -> Result<DecoderConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => read_json(p)?,
        None => DecoderConfig::toy(),
    };
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.layers, args.layers);
    set(&mut cfg.heads, args.heads);
    set(&mut cfg.channels, args.channels);
    set(&mut cfg.queries, args.queries);
    set(&mut cfg.neighbors, args.neighbors);
    set(&mut cfg.grid_side, args.grid_side);
    set(&mut cfg.dq_layers, args.dq_layers);
    set(&mut cfg.rf_layers, args.rf_layers);
    set(&mut cfg.sampling_points, args.sampling_points);
    set(&mut cfg.ffn_dim, args.ffn_dim);
    if args.inverse_sigmoid {
        cfg.refine = RefineMode::InverseSigmoid;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_decoder_sim(args: &DecoderSimArgs, seed: u64) -> Result<DecoderSimReport, CliError> {
    let weights = args.weights.weights()?;
    let config = decoder_config(args)?;
    let full_layers = args.full_layers.unwrap_or(config.layers);
    let plan = plan_targets(config.layers, full_layers).map_err(invalid)?;
    if args.persons == 0 || args.persons > config.queries {
        return Err(invalid(format!("persons must be in 1..={}", config.queries)));
    }
    if args.grid_size < 2 {
        return Err(invalid("grid-size must be at least 2"));
    }
    if !(args.perturb >= 0.0 && args.perturb.is_finite()) || !(args.grad_step > 0.0) {
        return Err(invalid("perturb must be non-negative and grad-step positive"));
    }

    let spec = SceneSpec {
        persons: CountDist::Fixed(args.persons),
        overlap_pairs: CountDist::Fixed(args.persons / 4),
        seed,
        ..SceneSpec::default()
    };
    let scene = generate_scenes(&spec, 1)?.remove(0);
    let annotations = normalized(&scene.annotations().map_err(invalid)?, [spec.width, spec.height]);
    let fboxes: Vec<BBox> = annotations.iter().map(|a| a.fbox).collect();
    let grid = FeatureGrid::with_objects(args.grid_size, args.grid_size, config.channels, &fboxes, seed);

    let mut params = DecoderParams::init(&config, seed);
    params.perturb(seed.wrapping_add(1), args.perturb);
    let decoder = Decoder::new(config.clone(), params)?;
    let outputs = decoder.forward(&grid)?;

    let routed = routed_loss(&outputs, &annotations, &plan, weights).map_err(invalid)?;
    let full_assignments: Vec<Assignment> = outputs
        .iter()
        .map(|o| {
            let preds: Vec<Prediction> =
                o.class_probs.iter().zip(&o.boxes).map(|(&prob, &bbox)| Prediction { prob, bbox }).collect();
            build_match_cost(&preds, &fboxes, weights).map(|c| solve_exact(&c))
        })
        .collect::<Result<_, _>>()
        .map_err(invalid)?;
    let diagnostics = attention_diagnostics(&outputs, &fboxes, &full_assignments);

    let grad_check = if args.grad_check {
        let report = finite_difference_check(&decoder, &grid, |outs| routed_loss_gradients(outs, &routed, weights), args.grad_step)?;
        Some(report)
    } else {
        None
    };

    let report = DecoderSimReport {
        seed,
        config,
        full_layers,
        persons: annotations.len(),
        total_loss: routed.total,
        losses: routed
            .layers
            .iter()
            .map(|l| LayerLossReport {
                layer: l.layer,
                target: l.kind,
                total: l.loss.total,
                class_term: l.loss.class_term,
                l1_term: l.loss.l1_term,
                giou_term: l.loss.giou_term,
                matched_queries: l.loss.assignment.gt_to_pred.clone(),
            })
            .collect(),
        self_attention: outputs
            .iter()
            .enumerate()
            .map(|(t, o)| SelfAttentionCount {
                layer: t,
                dense_queries: o.query_set.dense_queries,
                pairs: o.query_set.self_pairs,
                multiply_adds: o.query_set.self_madds,
            })
            .collect(),
        diagnostics,
        grad_check,
    };
    emit_json(&report, args.output.as_deref())?;
    if let Some(g) = &report.grad_check {
        if !(g.max_rel_err < args.grad_tolerance) {
            return Err(CliError::Verification(format!(
                "gradient check: max relative error {:e} at {} (tolerance {:e})",
                g.max_rel_err, g.worst, args.grad_tolerance
            )));
        }
    }
    Ok(report)
}

pub fn cmd_gen(args: &GenArgs, seed: u64) -> Result<SceneStats, CliError> {
    let mut spec: SceneSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    spec.seed = seed;
    let records = generate_scenes(&spec, args.images)?;
    write_odgt(&args.output, &records)?;
    let stats = scene_statistics(&records).map_err(invalid)?;
    emit_json(&stats, args.stats.as_deref())?;
    if args.check_stats {
        let persons = spec.persons.mean();
        let pairs = spec.overlap_pairs.mean();
        let off = |got: f64, want: f64, tol: f64| (got - want).abs() > tol * want;
        if off(stats.mean_persons, persons, 0.10) || off(stats.mean_overlap_pairs, pairs, 0.15) {
            return Err(CliError::Verification(format!(
                "persons/img {:.3} (target {persons}), overlap pairs/img {:.3} (target {pairs})",
                stats.mean_persons, stats.mean_overlap_pairs
            )));
        }
    }
    Ok(stats)
}

#[derive(Debug, Serialize)]
pub struct AugmentSummary {
    pub images: usize,
    pub crops: usize,
    pub fell_back: usize,
    pub kept: usize,
    pub dropped: usize,
    pub min_retention: f64,
}

pub fn cmd_augment(args: &AugmentArgs, seed: u64) -> Result<AugmentSummary, CliError> {
    let [lo, hi] = [args.min_scale, 1.0];
    if !(lo > 0.0 && lo <= hi) || !(0.0..=1.0).contains(&args.min_retention) {
        return Err(invalid("min-scale must be in (0, 1] and min-retention in [0, 1]"));
    }
    let spec = CropSpec {
        scale_range: [lo, hi],
        min_retention: args.min_retention,
        max_retries: args.max_retries,
        clip_full_boxes: args.clip_full_boxes,
    };
    let records = load_odgt(&args.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len() * args.copies);
    let mut summary =
        AugmentSummary { images: records.len(), crops: 0, fell_back: 0, kept: 0, dropped: 0, min_retention: 1.0 };
    for r in &records {
        let [w, h] = r.size.or(args.frame).ok_or_else(|| invalid(format!("image {} has no frame size; pass --frame", r.id)))?;
        let frame = BBox::new(0.0, 0.0, w, h).map_err(invalid)?;
        let anns = r.annotations().map_err(invalid)?;
        for c in 0..args.copies {
            let crop = crop_augment(&frame, &anns, &spec, &mut rng);
            summary.crops += 1;
            summary.fell_back += crop.fell_back as usize;
            summary.kept += crop.kept.len();
            summary.dropped += anns.len() - crop.kept.len();
            let retained = min_retention(&anns, &crop);
            summary.min_retention = summary.min_retention.min(retained);
            if args.audit && retained < args.min_retention {
                return Err(CliError::Verification(format!(
                    "crop {c} of image {} keeps only {retained:.4} of a visible box",
                    r.id
                )));
            }
            let size = [crop.window.width(), crop.window.height()];
            out.push(ImageRecord::from_annotations(format!("{}#crop{c}", r.id), Some(size), &crop.annotations));
        }
    }
    if summary.fell_back > 0 {
        log::warn!("{} of {} crops found no admissible window and kept the full frame", summary.fell_back, summary.crops);
    }
    write_odgt(&args.output, &out)?;
    emit_json(&summary, None)?;
    Ok(summary)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::MatchBench(a) => cmd_match_bench(a, cli.seed),
        Command::Eval(a) => cmd_eval(a).map(drop),
        Command::DecoderSim(a) => cmd_decoder_sim(a, cli.seed).map(drop),
        Command::Gen(a) => cmd_gen(a, cli.seed).map(drop),
        Command::Augment(a) => cmd_augment(a, cli.seed).map(drop),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
/// Help and version requests exit 0; any other usage problem exits 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_candidates_is_a_usage_error() {
        assert_eq!(main_with_args(["pedset", "match-bench", "--k-candidates", "0"]), 1);
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert_eq!(main_with_args(["pedset", "gen", "--output", "x", "--bogus"]), 1);
        assert_eq!(main_with_args(["pedset", "--help"]), 0);
    }

    #[test]
    fn frame_parser() {
        assert_eq!(parse_frame("640x480"), Ok([640.0, 480.0]));
        assert!(parse_frame("640").is_err());
        assert!(parse_frame("0x480").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation(String::new()).exit_code(), 1);
        assert_eq!(CliError::Verification(String::new()).exit_code(), 2);
        assert_eq!(CliError::Io(String::new()).exit_code(), 3);
    }
}
