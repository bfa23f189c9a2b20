//! `matting`: synthesize pretext data, pre-train, fine-tune, evaluate,
//! gradient-check and sweep the unknown ratio.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! failure, 3 gradient check outside tolerance.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use matting_core::data_io::{
    decode_image, decode_trimap, encode_image, encode_trimap, scan_image_dir, trimap_to_grid, ImageSource,
};
use matting_core::gradsuite::{run_suite, DEFAULT_SUITE_SEEDS};
use matting_core::grid::PixelGrid;
use matting_core::metrics::{evaluate, EvalResult, DEFAULT_PAD_TO};
use matting_core::model::{load_checkpoint, LoadStage};
use matting_core::seed::mix_seed;
use matting_core::synth::{CompositeSample, SampleConfig, Strategy, TrimapRatios};
use matting_core::trainer::{
    ablate_unknown_ratio, finetune, merge_tables, pretext_sample, pretrain, Mode, RunConfig, TrainSummary,
};
use matting_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "matting", version, about = "Pretext compositing pre-training for image matting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump pretext samples (fused, fg, bg, alpha, trimap, meta) to --out.
    Synthesize(SynthArgs),
    /// Pre-train on the compositing pretext task.
    Pretrain(TrainArgs),
    /// Fine-tune on a labelled set (toy set by default).
    Finetune(TrainArgs),
    /// Compute SAD/MSE/Grad/Conn over prediction and ground-truth directories.
    Evaluate(EvalArgs),
    /// Run the finite-difference suite over every op and the full objective.
    Gradcheck(GradArgs),
    /// Sweep the unknown ratio: pre-train + fine-tune per ratio and seed.
    Ablate(AblateArgs),
}

/// Flags shared by every command that draws samples.
#[derive(Args, Debug, Clone, Default)]
struct SampleFlags {
    /// Crop / sample side length in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Trimap cell side in pixels.
    #[arg(long)]
    grid: Option<usize>,
    /// Unknown, foreground, background ratios, e.g. 0.75,0.125,0.125.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    strategy: Option<Strategy>,
}

impl SampleFlags {
    fn apply(&self, cfg: &mut SampleConfig) -> anyhow::Result<()> {
        if let Some(size) = self.size {
            cfg.augment.crop_size = size;
        }
        if let Some(grid) = self.grid {
            cfg.grid = grid;
        }
        if let Some(r) = &self.ratios {
            cfg.ratios = TrimapRatios::parse(r).map_err(usage)?;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    sample: SampleFlags,
    /// Draw sources from this image directory instead of procedural textures.
    #[arg(long)]
    source_dir: Option<PathBuf>,
    /// Also write a 4-panel image: fused | trimap | labelled fg | generated fg.
    #[arg(long)]
    panels: bool,
    /// Checkpoint whose prediction drives the generated-fg panel.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[command(flatten)]
    sample: SampleFlags,
    /// Checkpoint to initialise from.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    load_stage: Option<LoadStage>,
    /// Feed only RGB, without the one-hot trimap.
    #[arg(long)]
    no_trimap_input: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Number of toy items (fine-tuning).
    #[arg(long)]
    n: Option<usize>,
    /// Pretext source image directory (pre-training).
    #[arg(long)]
    source_dir: Option<PathBuf>,
    /// Labelled dataset directory with fg/ and alpha/ (fine-tuning).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    trimap: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradArgs {
    /// Seeds per check.
    #[arg(long)]
    seeds: Option<u64>,
    /// Also write gradcheck.csv and the echoed config here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Unknown ratios to sweep, e.g. 0.25,0.5,0.75.
    #[arg(long)]
    thetas: Option<String>,
    /// Seeds per ratio, e.g. 1,2,3.
    #[arg(long)]
    seeds: Option<String>,
    /// Pre-training steps per run.
    #[arg(long)]
    steps: Option<usize>,
    /// Fine-tuning steps per run.
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Fully resolved `synthesize` settings, echoed as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthConfig {
    n: usize,
    seed: u64,
    sample: SampleConfig,
    source_dir: Option<PathBuf>,
    panels: bool,
    init_checkpoint: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 4,
            seed: 1,
            sample: SampleConfig::default(),
            source_dir: None,
            panels: false,
            init_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvalConfig {
    pred_dir: PathBuf,
    gt_dir: PathBuf,
    trimap_dir: PathBuf,
    pad_to: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pred_dir: PathBuf::new(),
            gt_dir: PathBuf::new(),
            trimap_dir: PathBuf::new(),
            pad_to: DEFAULT_PAD_TO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AblateConfig {
    thetas: Vec<f64>,
    seeds: Vec<u64>,
    pretrain: RunConfig,
    finetune: RunConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            thetas: vec![0.25, 0.5, 0.75],
            seeds: vec![1, 2, 3],
            pretrain: RunConfig::pretrain_default(),
            finetune: RunConfig::finetune_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct GradConfig {
    seeds: u64,
}

/// Errors in parsing, configuration or argument values (exit 1).
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.into()))
}

/// Config and bad-argument errors from the core map to usage errors.
fn classify(e: CoreError) -> anyhow::Error {
    match e {
        CoreError::Config(_) | CoreError::InvalidArgument(_) => usage(e),
        other => other.into(),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
}

/// Layers a TOML file over `base`, the same way for every config type.
fn layered<T: Serialize + for<'de> Deserialize<'de>>(base: &T, path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(toml::Value::try_from(base)?.try_into()?);
    };
    let text = read_text(path)?;
    let overrides: toml::Table = toml::from_str(&text).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    let mut merged = toml::Table::try_from(base)?;
    merge_tables(&mut merged, overrides);
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| usage(anyhow!("{}: {e}", path.display())))
}

fn echo_config<T: Serialize>(out: &Path, cfg: &T) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let text = toml::to_string_pretty(cfg)?;
    let path = out.join("config.toml");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> anyhow::Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| usage(anyhow!("bad {what} value {s:?}"))))
        .collect()
}

fn alpha_times(image: &PixelGrid, alpha: &PixelGrid) -> PixelGrid {
    PixelGrid::from_fn(image.height(), image.width(), 3, |y, x, c| {
        image.get(y, x, c) * alpha.get(y, x, 0)
    })
}

fn gray_to_rgb(g: &PixelGrid) -> PixelGrid {
    PixelGrid::from_fn(g.height(), g.width(), 3, |y, x, _| g.get(y, x, 0))
}

/// fused | trimap | labelled fg (α·F) | generated fg (α̂·I).
fn panel(sample: &CompositeSample, generated_alpha: &PixelGrid) -> PixelGrid {
    let parts = [
        sample.fused.clone(),
        gray_to_rgb(&trimap_to_grid(&sample.trimap)),
        alpha_times(&sample.foreground, &sample.alpha),
        alpha_times(&sample.fused, generated_alpha),
    ];
    let (h, w) = (sample.fused.height(), sample.fused.width());
    PixelGrid::from_fn(h, 4 * w, 3, |y, x, c| parts[x / w].get(y, x % w, c))
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    index: usize,
    seed: u64,
    size: usize,
    grid: usize,
    ratios: TrimapRatios,
    strategy: Strategy,
    label_counts: [usize; 3],
    source: &'a str,
}

fn cmd_synthesize(args: SynthArgs) -> anyhow::Result<()> {
    let mut cfg: SynthConfig = layered(&SynthConfig::default(), args.config.as_deref())?;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    args.sample.apply(&mut cfg.sample)?;
    if args.source_dir.is_some() {
        cfg.source_dir = args.source_dir;
    }
    cfg.panels |= args.panels;
    if args.init.is_some() {
        cfg.init_checkpoint = args.init;
    }
    if cfg.n == 0 {
        return Err(usage(anyhow!("--n must be at least 1")));
    }
    cfg.sample.validate().map_err(classify)?;
    echo_config(&args.out, &cfg)?;

    let size = cfg.sample.size();
    let source = match &cfg.source_dir {
        Some(dir) => ImageSource::from_dir(dir)?,
        None => ImageSource::Procedural { size },
    };
    let model = match &cfg.init_checkpoint {
        Some(p) => Some(load_checkpoint(p)?.into_net()?),
        None => None,
    };
    let source_name = if cfg.source_dir.is_some() { "images" } else { "procedural" };
    for i in 0..cfg.n {
        let seed = mix_seed(cfg.seed, i as u64);
        let sample = pretext_sample(&source, &cfg.sample, seed)?;
        let name = format!("{i:04}");
        let dir = args.out.join(&name);
        encode_image(&sample.fused, &dir.join("fused.png"))?;
        encode_image(&sample.foreground, &dir.join("fg.png"))?;
        encode_image(&sample.background, &dir.join("bg.png"))?;
        encode_image(&sample.alpha, &dir.join("alpha.png"))?;
        encode_trimap(&sample.trimap, &dir.join("trimap.png"))?;
        // Flat fg/ alpha/ bg/ layout so the output doubles as a fine-tuning set.
        encode_image(&sample.foreground, &args.out.join("fg").join(format!("{name}.png")))?;
        encode_image(&sample.alpha, &args.out.join("alpha").join(format!("{name}.png")))?;
        encode_image(&sample.background, &args.out.join("bg").join(format!("{name}.png")))?;
        let meta = SampleMeta {
            index: i,
            seed,
            size,
            grid: cfg.sample.grid,
            ratios: cfg.sample.ratios,
            strategy: cfg.sample.strategy,
            label_counts: sample.trimap.counts(),
            source: source_name,
        };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        if cfg.panels {
            let generated = match &model {
                Some(net) => net.predict(&sample.fused, &sample.trimap)?,
                None => sample.alpha.clone(),
            };
            encode_image(&panel(&sample, &generated), &dir.join("panel.png"))?;
        }
    }
    println!("wrote {} samples to {}", cfg.n, args.out.display());
    Ok(())
}

fn resolve_run(args: &TrainArgs, mode: Mode) -> anyhow::Result<RunConfig> {
    let base = match mode {
        Mode::Pretrain => RunConfig::pretrain_default(),
        Mode::Finetune => RunConfig::finetune_default(),
    };
    let mut run = match &args.config {
        Some(path) => RunConfig::from_toml_over(&base, &read_text(path)?)
            .map_err(|e| usage(anyhow!("{}: {e}", path.display())))?,
        None => base,
    };
    if run.mode != mode {
        return Err(usage(anyhow!("config mode {:?} does not match the command", run.mode)));
    }
    if let Some(v) = args.seed {
        run.seed = v;
    }
    if let Some(v) = args.steps {
        run.steps = v;
    }
    if let Some(v) = args.batch {
        run.batch = v;
    }
    if let Some(v) = args.lr {
        run.optim.base_lr = v;
    }
    args.sample.apply(&mut run.sample)?;
    if let Some(size) = args.sample.size {
        run.data.source_size = run.data.source_size.max(size);
    }
    if args.init.is_some() {
        run.init_checkpoint = args.init.clone();
    }
    if let Some(v) = args.load_stage {
        run.load_stage = v;
    }
    if args.no_trimap_input {
        run.use_trimap_input = false;
    }
    if let Some(v) = args.workers {
        run.workers = v;
    }
    if let Some(v) = args.n {
        run.data.toy_items = v;
    }
    if args.source_dir.is_some() {
        run.data.source_dir = args.source_dir.clone();
    }
    if args.data.is_some() {
        run.data.dataset_dir = args.data.clone();
    }
    run.out_dir = args.out.clone();
    run.validate().map_err(classify)?;
    Ok(run)
}

fn report_training(summary: &TrainSummary) {
    if let Some(report) = &summary.load_report {
        println!(
            "loaded {} tensors ({} partial, {} fresh)",
            report.loaded.len(),
            report.partial.len(),
            report.kept_fresh.len()
        );
    }
    let n = summary.records.len();
    let window = n.clamp(1, 100);
    println!(
        "steps {n}: first-{window} mean loss {:.4}, last-{window} mean loss {:.4}",
        summary.mean_loss(0, window),
        summary.mean_loss(n - window.min(n), n)
    );
    if let Some(e) = summary.final_eval() {
        println!("test SAD {:.4} MSE {:.4} Grad {:.4} Conn {:.4}", e.sad, e.mse, e.grad, e.conn);
    }
    println!("checkpoint {}", summary.checkpoint.display());
}

fn cmd_train(args: TrainArgs, mode: Mode) -> anyhow::Result<()> {
    let run = resolve_run(&args, mode)?;
    let summary = match mode {
        Mode::Pretrain => pretrain(run),
        Mode::Finetune => finetune(run),
    }
    .map_err(classify)?;
    report_training(&summary);
    Ok(())
}

fn stem_map(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    Ok(scan_image_dir(dir)?
        .into_iter()
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect())
}

fn to_alpha(img: PixelGrid, path: &Path) -> anyhow::Result<PixelGrid> {
    match img.channels() {
        1 => Ok(img),
        3 => Ok(img.channel(0)),
        c => bail!("{}: expected a gray alpha, got {c} channels", path.display()),
    }
}

fn cmd_evaluate(args: EvalArgs) -> anyhow::Result<()> {
    let mut cfg: EvalConfig = layered(&EvalConfig::default(), args.config.as_deref())?;
    cfg.pred_dir = args.pred;
    cfg.gt_dir = args.gt;
    cfg.trimap_dir = args.trimap;
    echo_config(&args.out, &cfg)?;

    let preds = stem_map(&cfg.pred_dir)?;
    let gts = stem_map(&cfg.gt_dir)?;
    let trimaps = stem_map(&cfg.trimap_dir)?;
    if gts.is_empty() {
        bail!("no ground-truth images under {}", cfg.gt_dir.display());
    }
    let mut csv = String::from("name,sad,mse,grad,conn,unknown_pixels\n");
    let mut results = Vec::new();
    for (name, gt_path) in &gts {
        let pred_path = preds
            .get(name)
            .ok_or_else(|| anyhow!("no prediction for {name} in {}", cfg.pred_dir.display()))?;
        let tri_path = trimaps
            .get(name)
            .ok_or_else(|| anyhow!("no trimap for {name} in {}", cfg.trimap_dir.display()))?;
        let gt = to_alpha(decode_image(gt_path)?.pixels, gt_path)?;
        let pred = to_alpha(decode_image(pred_path)?.pixels, pred_path)?;
        let trimap = decode_trimap(tri_path)?;
        let r = evaluate(&pred, &gt, &trimap, cfg.pad_to).with_context(|| format!("evaluating {name}"))?;
        csv.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.sad, r.mse, r.grad, r.conn, r.unknown_pixel_count
        ));
        results.push(r);
    }
    let m = EvalResult::mean(&results);
    csv.push_str(&format!("mean,{:.6},{:.6},{:.6},{:.6},\n", m.sad, m.mse, m.grad, m.conn));
    fs::write(args.out.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Returns whether every check passed.
fn cmd_gradcheck(args: GradArgs) -> anyhow::Result<bool> {
    let cfg = GradConfig {
        seeds: args.seeds.unwrap_or(DEFAULT_SUITE_SEEDS),
    };
    if cfg.seeds == 0 {
        return Err(usage(anyhow!("--seeds must be at least 1")));
    }
    let report = run_suite(cfg.seeds, None)?;
    print!("{}", report.table());
    if let Some(out) = &args.out {
        echo_config(out, &cfg)?;
        let mut csv = String::from("check,seeds,max_rel_err,passed\n");
        for r in &report.rows {
            csv.push_str(&format!("{},{},{:.6e},{}\n", r.check, r.seeds, r.max_rel_err, r.passed));
        }
        fs::write(out.join("gradcheck.csv"), csv)?;
    }
    println!(
        "{} (max relative error {:.3e}, tolerance {:.0e})",
        if report.passed() { "all checks passed" } else { "gradient check FAILED" },
        report.max_rel_err(),
        report.tolerance
    );
    Ok(report.passed())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    let mut cfg: AblateConfig = layered(&AblateConfig::default(), args.config.as_deref())?;
    if let Some(t) = &args.thetas {
        cfg.thetas = parse_list(t, "theta")?;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = parse_list(s, "seed")?;
    }
    if let Some(v) = args.steps {
        cfg.pretrain.steps = v;
    }
    if let Some(v) = args.finetune_steps {
        cfg.finetune.steps = v;
    }
    for run in [&mut cfg.pretrain, &mut cfg.finetune] {
        if let Some(v) = args.batch {
            run.batch = v;
        }
        if let Some(v) = args.size {
            run.sample.augment.crop_size = v;
            run.data.source_size = run.data.source_size.max(v);
        }
        if let Some(v) = args.grid {
            run.sample.grid = v;
        }
        if let Some(v) = args.workers {
            run.workers = v;
        }
    }
    cfg.pretrain.mode = Mode::Pretrain;
    cfg.finetune.mode = Mode::Finetune;
    for &theta in &cfg.thetas {
        let mut probe = cfg.pretrain.clone();
        probe.sample.ratios = TrimapRatios::from_unknown(theta).map_err(classify)?;
        probe.validate().map_err(classify)?;
    }
    cfg.finetune.validate().map_err(classify)?;
    echo_config(&args.out, &cfg)?;
    let rows = ablate_unknown_ratio(&cfg.thetas, &cfg.seeds, &cfg.pretrain, &cfg.finetune, &args.out)
        .map_err(classify)?;
    println!("theta,seed,sad,mse");
    for r in rows {
        println!("{},{},{:.4},{:.4}", r.theta, r.seed, r.result.sad, r.result.mse);
    }
    println!("table: {}", args.out.join("ablation.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synthesize(a) => cmd_synthesize(a).map(|_| true),
        Command::Pretrain(a) => cmd_train(a, Mode::Pretrain).map(|_| true),
        Command::Finetune(a) => cmd_train(a, Mode::Finetune).map(|_| true),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
