//! `fracal` command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fracal_core::annotations::{compute_class_frequencies, spatial_histogram};
use fracal_core::calibration::{check_params, Baseline, Method, Mode, DEFAULT_BETA, DEFAULT_LAMBDA, PHI_MIN};
use fracal_core::eval::{evaluate, nms, EvalConfig, DEFAULT_MATCH_IOU, DEFAULT_MAX_PER_IMAGE, DEFAULT_NMS_IOU};
use fracal_core::fractal::{FractalConfig, Variant};
use fracal_core::synthetic::{simulate_scenario, ScenarioSpec, RNG_ALGORITHM};
use fracal_core::{Dataset, Group};
use serde::Serialize;

use crate::coco::{load_annotations, write_annotations};
use crate::export::{histogram_json, write_histogram_csv, write_series_csv, write_stats_csv};
use crate::pipeline::{calibrate_all, fit, phi_frequency_correlation};
use crate::records::{read_detections_any, read_logits, write_detections, write_logits, write_scores, StreamHeader};
use crate::report::{render_table, ReportFile};
use crate::weights::WeightsFile;

#[derive(Debug, Parser)]
#[command(name = "fracal", version, about = "Fractal-dimension calibration for long-tailed object detection")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-class counts, frequency groups and location histograms.
    Stats(StatsArgs),
    /// Fractal dimensions and calibration weights from training annotations.
    Weights(WeightsArgs),
    /// Calibrate a logits file into a scores file.
    Calibrate(CalibrateArgs),
    /// Class-wise non-maximum suppression of scores or detections.
    Nms(NmsArgs),
    /// NMS then AP against ground-truth annotations.
    Eval(EvalArgs),
    /// Write a synthetic long-tailed scenario: annotations and logits.
    Simulate(SimulateArgs),
    /// Pearson correlation of the dimension against log frequency.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// COCO/LVIS-style annotation file.
    pub annotations: PathBuf,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid size of the location histogram.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Restrict the histogram to one class.
    #[arg(long = "class")]
    pub class_id: Option<u64>,
    /// Histogram destination, JSON when the name ends in `.json`, CSV otherwise.
    #[arg(long, requires = "grid")]
    pub histogram_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Box,
    Info,
    SmoothInfo,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Box => Variant::Box,
            VariantArg::Info => Variant::Info,
            VariantArg::SmoothInfo => Variant::SmoothInfo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Softmax,
    Sigmoid,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Softmax => Mode::Softmax,
            ModeArg::Sigmoid => Mode::Sigmoid,
        }
    }
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "box")]
    pub variant: VariantArg,
    /// Upper bound on the largest grid size of the fit.
    #[arg(long)]
    pub t_cap: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Activation the weights are meant for, recorded in the header.
    #[arg(long, value_enum, default_value = "softmax")]
    pub mode: ModeArg,
    /// Also store location counts for grid calibration at this size; repeatable.
    #[arg(long = "grid")]
    pub grids: Vec<usize>,
    /// Write the (G, nu) series of every class as CSV.
    #[arg(long)]
    pub series_out: Option<PathBuf>,
    /// Skip the +2 shift of the info variants.
    #[arg(long)]
    pub no_info_shift: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Logits file (JSON Lines with a header line).
    pub logits: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// none, class_only, grid(G), fracal, fracal_binary, opposite, la(tau), iif, pcsa, norcal(gamma).
    #[arg(long, default_value = "fracal")]
    pub method: String,
    /// Override the weights file's beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Override the weights file's lambda.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// NorCal exponent, for `--method norcal`.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Logit-adjustment temperature, for `--method la`.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Grid size, for `--method grid`.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Scores file or detections file.
    pub input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    pub nms_iou: f64,
    /// Suppress across classes too.
    #[arg(long)]
    pub class_agnostic: bool,
    /// Drop detections scoring below this before suppression.
    #[arg(long, default_value_t = 0.0)]
    pub score_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores file or detections file.
    pub detections: PathBuf,
    /// Ground-truth annotations of the evaluated images.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Weights file whose frequency groups are used.
    #[arg(long, conflicts_with = "train")]
    pub weights: Option<PathBuf>,
    /// Training annotations to derive frequency groups from.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = DEFAULT_MATCH_IOU)]
    pub iou_match: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_PER_IMAGE)]
    pub max_per_image: usize,
    #[arg(long, default_value_t = 0.0)]
    pub score_threshold: f64,
    /// Report JSON destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the generation time out of the report.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    /// Frequency and location biased detector.
    Default,
    /// Uniform classes with a sparse tail.
    SparseGrid,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub scenario: ScenarioArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub images: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Weights file or annotation file.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "box")]
    pub variant: VariantArg,
    #[arg(long)]
    pub t_cap: Option<usize>,
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Stats(a) => cmd_stats(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Nms(a) => cmd_nms(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Correlate(a) => cmd_correlate(a),
    }
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{}: no such file", path.display());
    }
    Ok(())
}

fn require_out_dir(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("{}: output directory does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

fn create(path: &Path) -> anyhow::Result<io::BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("{}: cannot create", path.display()))?;
    Ok(io::BufWriter::new(f))
}

fn cmd_stats(a: StatsArgs) -> anyhow::Result<()> {
    require_file(&a.annotations)?;
    for p in [&a.out, &a.histogram_out].into_iter().flatten() {
        require_out_dir(p)?;
    }
    let ds = load_annotations(&a.annotations)?;
    let freq = compute_class_frequencies(&ds);
    if let Some(id) = a.class_id {
        if !ds.categories().contains_key(&id) {
            bail!("class {id} is not in the category catalog");
        }
    }
    let hist = a.grid.map(|g| spatial_histogram(&ds, a.class_id, g)).transpose()?;
    match &a.out {
        Some(p) => write_stats_csv(create(p)?, &ds, &freq).with_context(|| p.display().to_string())?,
        None => write_stats_csv(io::stdout().lock(), &ds, &freq)?,
    }
    if let Some(hist) = &hist {
        match &a.histogram_out {
            Some(p) if p.extension().is_some_and(|e| e == "json") => {
                let mut text = serde_json::to_string_pretty(&histogram_json(hist, a.class_id))?;
                text.push('\n');
                fs::write(p, text).with_context(|| p.display().to_string())?;
            }
            Some(p) => write_histogram_csv(create(p)?, hist).with_context(|| p.display().to_string())?,
            None => {
                println!("histogram G = {}:", hist.grid_size());
                write_histogram_csv(io::stdout().lock(), hist)?;
            }
        }
    }
    Ok(())
}

fn fractal_config(variant: VariantArg, t_cap: Option<usize>, shift_info: bool) -> anyhow::Result<FractalConfig> {
    let cfg = FractalConfig { variant: variant.into(), t_cap, shift_info };
    cfg.validate()?;
    Ok(cfg)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn print_weights_summary(file: &WeightsFile) {
    let mut by_group: BTreeMap<&str, usize> = BTreeMap::new();
    for c in file.classes.values() {
        *by_group.entry(c.group.as_str()).or_default() += 1;
    }
    let count = |g: Group| by_group.get(g.as_str()).copied().unwrap_or(0);
    println!(
        "classes: {} (rare {}, common {}, frequent {})",
        file.classes.len(),
        count(Group::Rare),
        count(Group::Common),
        count(Group::Frequent)
    );
    let fallback = file.classes.values().filter(|c| c.fallback).count();
    println!("fallback phi = 1 (n < 4): {fallback}");

    let mut phis: Vec<f64> = file.classes.values().map(|c| c.phi).collect();
    phis.sort_by(f64::total_cmp);
    if !phis.is_empty() {
        let mean = phis.iter().sum::<f64>() / phis.len() as f64;
        println!(
            "phi: min {:.3}  q1 {:.3}  median {:.3}  q3 {:.3}  max {:.3}  mean {:.3}",
            phis[0],
            quantile(&phis, 0.25),
            quantile(&phis, 0.5),
            quantile(&phis, 0.75),
            phis[phis.len() - 1],
            mean
        );
        let mut bins = [0usize; 4];
        for &p in &phis {
            bins[((p * 2.0) as usize).min(3)] += 1;
        }
        println!(
            "phi histogram: [0, 0.5) {}  [0.5, 1) {}  [1, 1.5) {}  [1.5, 2] {}",
            bins[0], bins[1], bins[2], bins[3]
        );
    }
    match phi_frequency_correlation(file.classes.values().map(|c| (c.n, c.phi))) {
        Ok((r, n)) => println!("pearson(phi, ln n): {r:.4} over {n} classes"),
        Err(e) => println!("pearson(phi, ln n): undefined ({e})"),
    }
}

fn cmd_weights(a: WeightsArgs) -> anyhow::Result<()> {
    require_file(&a.annotations)?;
    require_out_dir(&a.out)?;
    if let Some(p) = &a.series_out {
        require_out_dir(p)?;
    }
    let cfg = fractal_config(a.variant, a.t_cap, !a.no_info_shift)?;
    check_params(a.beta, a.lambda)?;
    let ds = load_annotations(&a.annotations)?;
    let mut grids = a.grids.clone();
    grids.sort_unstable();
    grids.dedup();
    let fitted = fit(&ds, &cfg, &grids)?;
    let file = WeightsFile::from_fitted(&ds, &fitted, cfg.variant, cfg.t_cap, a.beta, a.lambda, a.mode.into());
    // surface surrogate / floor cases before writing
    file.calibration(None, None)?;
    file.write(&a.out)?;
    if let Some(p) = &a.series_out {
        write_series_csv(create(p)?, &fitted.estimates).with_context(|| p.display().to_string())?;
    }
    let zero: Vec<u64> = file.classes.iter().filter(|(_, c)| c.n == 0).map(|(id, _)| *id).collect();
    if !zero.is_empty() {
        log::warn!("{} classes have no instances; their prior uses a count of 1", zero.len());
    }
    let degenerate = file.classes.values().filter(|c| c.phi < PHI_MIN).count();
    if degenerate > 0 {
        log::warn!("{degenerate} classes have phi = 0 and are floored during space calibration");
    }
    print_weights_summary(&file);
    Ok(())
}

fn resolve_method(a: &CalibrateArgs) -> anyhow::Result<Method> {
    let name = a.method.trim().to_ascii_lowercase();
    let method = if name == "grid" {
        let g = a.grid.context("--method grid needs --grid G")?;
        Method::Grid(g)
    } else {
        name.parse::<Method>()?
    };
    Ok(match method {
        Method::Baseline(Baseline::La { .. }) if a.tau.is_some() => format!("la({})", a.tau.unwrap()).parse()?,
        Method::Baseline(Baseline::NorCal { .. }) if a.gamma.is_some() => {
            format!("norcal({})", a.gamma.unwrap()).parse()?
        }
        Method::Grid(g) if a.grid.is_some_and(|flag| flag != g) => {
            bail!("--method grid({g}) disagrees with --grid {}", a.grid.unwrap())
        }
        m => m,
    })
}

fn cmd_calibrate(a: CalibrateArgs) -> anyhow::Result<()> {
    require_file(&a.logits)?;
    require_file(&a.weights)?;
    require_out_dir(&a.out)?;
    let method = resolve_method(&a)?;
    let weights_file = WeightsFile::read(&a.weights)?;
    let weights = weights_file.calibration(a.beta, a.lambda)?;
    if let Method::Grid(g) = method {
        if !weights.grid_sizes().any(|s| s == g) {
            bail!("{}: no location counts for G = {g}; rerun `weights --grid {g}`", a.weights.display());
        }
    }
    let logits = read_logits(&a.logits)?;
    if !method.accepts(logits.mode) {
        bail!("method {method} cannot be applied to {} logits", logits.mode);
    }
    if logits.class_ids != weights_file.class_ids() {
        bail!(
            "{} has {} classes that do not match the {} classes of {}",
            a.logits.display(),
            logits.class_ids.len(),
            weights_file.classes.len(),
            a.weights.display()
        );
    }
    if weights_file.mode() != logits.mode {
        log::warn!("weights were exported for {} mode, logits are {}", weights_file.mode(), logits.mode);
    }
    let scores = calibrate_all(&logits.records, logits.mode, method, &weights)?;
    let mut header = StreamHeader::new(logits.mode, &logits.class_ids);
    header.method = Some(method.to_string());
    write_scores(&a.out, &header, &logits.records, &scores)?;
    log::info!("calibrated {} records with {method}", scores.len());
    Ok(())
}

fn cmd_nms(a: NmsArgs) -> anyhow::Result<()> {
    require_file(&a.input)?;
    require_out_dir(&a.out)?;
    if !(0.0..=1.0).contains(&a.nms_iou) {
        bail!("--nms-iou must lie in [0, 1], got {}", a.nms_iou);
    }
    let dets = read_detections_any(&a.input, a.score_threshold)?;
    let kept = nms(&dets, a.nms_iou, !a.class_agnostic);
    write_detections(&a.out, &kept)?;
    println!("kept {} of {} detections", kept.len(), dets.len());
    Ok(())
}

fn eval_groups(a: &EvalArgs, gts: &Dataset) -> anyhow::Result<BTreeMap<u64, Group>> {
    if let Some(p) = &a.weights {
        return Ok(WeightsFile::read(p)?.groups());
    }
    let freq = match &a.train {
        Some(p) => compute_class_frequencies(&load_annotations(p)?),
        None => {
            log::warn!("no --weights or --train given; frequency groups come from the evaluated annotations");
            compute_class_frequencies(gts)
        }
    };
    Ok(freq.into_iter().map(|(id, f)| (id, f.group)).collect())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    require_file(&a.detections)?;
    require_file(&a.annotations)?;
    for p in [&a.weights, &a.train].into_iter().flatten() {
        require_file(p)?;
    }
    if let Some(p) = &a.out {
        require_out_dir(p)?;
    }
    let config = EvalConfig {
        nms_iou: Some(a.nms_iou),
        classwise_nms: true,
        iou_match: a.iou_match,
        max_per_image: a.max_per_image,
    };
    config.validate()?;
    let gts = load_annotations(&a.annotations)?;
    let groups = eval_groups(&a, &gts)?;
    let dets = read_detections_any(&a.detections, a.score_threshold)?;
    let report = evaluate(&dets, &gts, &groups, &config)?;
    let method = method_of(&a.detections);
    if let Some(p) = &a.out {
        ReportFile::new(&report, &config, method, !a.no_timestamp).write(p)?;
    }
    let mut stdout = io::stdout().lock();
    stdout.write_all(render_table(&report, &groups).as_bytes())?;
    Ok(())
}

fn method_of(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let first = text.lines().find(|l| !l.trim().is_empty())?;
    let v: serde_json::Value = serde_json::from_str(first).ok()?;
    v.get("method")?.as_str().map(str::to_string)
}

#[derive(Serialize)]
struct ScenarioMeta {
    rng: &'static str,
    seed: u64,
    scenario: String,
    num_classes: usize,
    images: usize,
    frequency_exponent: f64,
    max_count: u64,
    frequency_bias: f64,
    spatial_bias: f64,
    separation: f64,
    noise: f64,
    clutter_rate: f64,
    location_shift: f64,
    processes: BTreeMap<u64, String>,
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut spec = match a.scenario {
        ScenarioArg::Default => ScenarioSpec::default(),
        ScenarioArg::SparseGrid => ScenarioSpec::sparse_grid(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(c) = a.classes {
        spec.num_classes = c;
    }
    if let Some(n) = a.images {
        spec.images = n;
    }
    let batch = simulate_scenario(&spec)?;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;

    write_annotations(&a.out.join("train.json"), &batch.train)?;
    write_annotations(&a.out.join("test.json"), &batch.ground_truth)?;
    let mut header = StreamHeader::new(batch.mode, &batch.class_ids);
    header.rng = Some(RNG_ALGORITHM.to_string());
    header.seed = Some(spec.seed);
    write_logits(&a.out.join("logits.jsonl"), &header, &batch.proposals)?;

    let b = spec.detector_bias;
    let meta = ScenarioMeta {
        rng: RNG_ALGORITHM,
        seed: spec.seed,
        scenario: format!("{:?}", a.scenario).to_ascii_lowercase(),
        num_classes: spec.num_classes,
        images: spec.images,
        frequency_exponent: spec.frequency_law.exponent,
        max_count: spec.frequency_law.max_count,
        frequency_bias: b.frequency,
        spatial_bias: b.spatial,
        separation: b.separation,
        noise: b.noise,
        clutter_rate: spec.clutter_rate,
        location_shift: spec.location_shift,
        processes: batch.processes.iter().map(|(id, p)| (*id, p.kind().to_string())).collect(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(a.out.join("scenario.json"), text)?;
    println!(
        "{} classes, {} train / {} test objects, {} proposals -> {}",
        spec.num_classes,
        batch.train.instances().len(),
        batch.ground_truth.instances().len(),
        batch.proposals.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_correlate(a: CorrelateArgs) -> anyhow::Result<()> {
    require_file(&a.input)?;
    let (pairs, source): (Vec<(u64, f64)>, &str) = match WeightsFile::read(&a.input) {
        Ok(w) => (w.classes.values().map(|c| (c.n, c.phi)).collect(), "weights"),
        Err(_) => {
            let ds = load_annotations(&a.input)?;
            let cfg = fractal_config(a.variant, a.t_cap, true)?;
            let fitted = fit(&ds, &cfg, &[])?;
            (fitted.estimates.values().map(|e| (e.instance_count, e.phi)).collect(), "annotations")
        }
    };
    let (r, n) = phi_frequency_correlation(pairs.into_iter())?;
    println!("pearson(phi, ln n) = {r:.4} over {n} classes ({source})");
    Ok(())
}
