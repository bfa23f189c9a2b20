//! Pretext pre-training, supervised fine-tuning and the unknown-ratio sweep.
//!
//! Every sample is a pure function of `(run seed, global sample index)`, and
//! per-sample gradients are summed in index order, so a run is bitwise
//! reproducible for any worker count.

mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{load_matting_dir, procedural_texture, toy_matting_dataset, ImageSource, TextureKind};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::losses::{total_loss, LossBreakdown, LossTargets, LossWeights};
use crate::metrics::{evaluate, EvalResult, DEFAULT_PAD_TO};
use crate::model::{
    load_checkpoint, load_into, merge_with_trimap, save_checkpoint, Checkpoint, LoadReport, LoadStage,
    MattingNet, ModelConfig,
};
use crate::seed::{mix_seed, rng_from_seed, Rng};
use crate::synth::{
    composite, make_finetune_trimap, make_pretrain_sample, AugmentConfig, CompositeSample, SampleConfig,
    Trimap, TrimapRatios,
};
use crate::tensor::{Tape, Tensor};

pub use optim::{
    clip_global_norm, lr_at, optimizer_step, OptimConfig, OptimKind, OptimizerState, ScheduleConfig,
    OPTIMIZER_MAGIC,
};

/// Seed streams derived from the run seed.
const MODEL_STREAM: u64 = 0x6d6f_6465_6c00_0000;
const SAMPLE_STREAM: u64 = 0x7361_6d70_6c65_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
}

/// Data sources. Pre-training uses `source_dir` images or procedural
/// textures; fine-tuning uses `dataset_dir` (fg/ + alpha/) or the toy set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source_dir: Option<PathBuf>,
    /// Side of procedural source textures; at least the crop size.
    pub source_size: usize,
    pub dataset_dir: Option<PathBuf>,
    pub toy_items: usize,
    pub toy_seed: u64,
    /// Seeds the fixed backgrounds and trimaps of the test split.
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source_dir: None,
            source_size: 80,
            dataset_dir: None,
            toy_items: 100,
            toy_seed: 2024,
            eval_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub warmup_fraction: f64,
    pub floor_lr: f64,
    pub optim: OptimConfig,
    pub sample: SampleConfig,
    pub model: ModelConfig,
    /// Start from this checkpoint instead of random weights.
    pub init_checkpoint: Option<PathBuf>,
    pub load_stage: LoadStage,
    pub use_trimap_input: bool,
    pub loss_weights: LossWeights,
    pub clip_norm: f64,
    /// Evaluate every this many steps (fine-tuning; 0 = only at the end).
    pub eval_every: usize,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    pub workers: usize,
    pub data: DataConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::pretrain_default()
    }
}

pub const DESK_SIZE: usize = 64;
pub const DESK_GRID: usize = 4;
pub const DESK_PRETRAIN_LR: f64 = 1e-3;
pub const DESK_FINETUNE_LR: f64 = 1e-3;

impl RunConfig {
    /// 2000 steps of batch 8 at 64×64, AdamW, 10% warmup.
    pub fn pretrain_default() -> Self {
        Self {
            mode: Mode::Pretrain,
            seed: 1,
            steps: 2000,
            batch: 8,
            warmup_fraction: 0.1,
            floor_lr: 0.0,
            optim: OptimConfig::pretrain(DESK_PRETRAIN_LR),
            sample: SampleConfig {
                grid: DESK_GRID,
                ratios: TrimapRatios::default(),
                augment: AugmentConfig {
                    crop_size: DESK_SIZE,
                    ..AugmentConfig::default()
                },
                ..SampleConfig::default()
            },
            model: ModelConfig::default(),
            init_checkpoint: None,
            load_stage: LoadStage::EncoderDecoder,
            use_trimap_input: true,
            loss_weights: LossWeights::default(),
            clip_norm: 5.0,
            eval_every: 0,
            checkpoint_every: 0,
            workers: 1,
            data: DataConfig::default(),
            out_dir: PathBuf::from("runs/pretrain"),
        }
    }

    /// Adam with β = (0.5, 0.999) on the toy set, warmup then cosine.
    pub fn finetune_default() -> Self {
        Self {
            mode: Mode::Finetune,
            steps: 600,
            optim: OptimConfig::finetune(DESK_FINETUNE_LR),
            out_dir: PathBuf::from("runs/finetune"),
            ..Self::pretrain_default()
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            total_steps: self.steps,
            warmup_steps: (self.steps as f64 * self.warmup_fraction).round() as usize,
            floor_lr: self.floor_lr,
        }
    }

    pub fn crop_size(&self) -> usize {
        self.sample.size()
    }

    /// The model config with input channels set from `use_trimap_input`.
    pub fn resolved_model(&self) -> ModelConfig {
        ModelConfig {
            input_channels: if self.use_trimap_input { 6 } else { 3 },
            ..self.model
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(Error::Config("steps and batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must be in [0, 1)".into()));
        }
        self.schedule().validate()?;
        self.optim.validate()?;
        self.sample.validate()?;
        self.resolved_model().validate()?;
        let m = self.resolved_model().size_multiple();
        if self.crop_size() % m != 0 {
            return Err(Error::Config(format!(
                "crop size {} must be a multiple of {m} for depth {}",
                self.crop_size(),
                self.model.depth
            )));
        }
        if self.data.source_size < self.crop_size() {
            return Err(Error::Config(format!(
                "source_size {} is smaller than the crop size {}",
                self.data.source_size,
                self.crop_size()
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses `text` as overrides on top of `base`: keys absent from the
    /// file keep `base`'s values, tables merge recursively.
    pub fn from_toml_over(base: &RunConfig, text: &str) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, overrides);
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }
}

pub fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// One pretext sample: foreground and background drawn from `source`, then
/// [`make_pretrain_sample`]. Depends only on `(source, cfg, seed)`.
pub fn pretext_sample(source: &ImageSource, cfg: &SampleConfig, seed: u64) -> Result<CompositeSample> {
    let mut rng = rng_from_seed(seed);
    let fg = source.draw(&mut rng)?;
    let bg = source.draw(&mut rng)?;
    make_pretrain_sample(&fg, &bg, cfg, rng.gen())
}

#[derive(Clone, Debug, PartialEq)]
struct LabelledItem {
    fg: PixelGrid,
    alpha: PixelGrid,
}

enum Data {
    Pretext(ImageSource),
    Labelled {
        train: Vec<LabelledItem>,
        test: Vec<LabelledItem>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

pub struct Trainer {
    run: RunConfig,
    model: MattingNet<f32>,
    state: OptimizerState,
    data: Data,
    pool: Option<rayon::ThreadPool>,
    load_report: Option<LoadReport>,
}

fn random_crop(g: &PixelGrid, size: usize, rng: &mut Rng) -> Result<PixelGrid> {
    if g.height() < size || g.width() < size {
        return Err(Error::invalid(format!(
            "{}x{} item is smaller than the {size}x{size} crop",
            g.height(),
            g.width()
        )));
    }
    let top = rng.gen_range(0..=g.height() - size);
    let left = rng.gen_range(0..=g.width() - size);
    g.crop(top, left, size, size)
}

fn background_for(height: usize, width: usize, rng: &mut Rng) -> Result<PixelGrid> {
    let side = height.max(width).max(crate::data_io::MIN_TEXTURE_SIZE);
    procedural_texture(TextureKind::random(rng), side, rng)?.crop(0, 0, height, width)
}

impl Trainer {
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let mut model = MattingNet::build(run.resolved_model(), &mut rng_from_seed(mix_seed(run.seed, MODEL_STREAM)))?;
        let load_report = match &run.init_checkpoint {
            Some(path) => {
                let ckpt = load_checkpoint(path)?;
                Some(load_into(&mut model, &ckpt, run.load_stage)?)
            }
            None => None,
        };
        let data = match run.mode {
            Mode::Pretrain => Data::Pretext(match &run.data.source_dir {
                Some(dir) => ImageSource::from_dir(dir)?,
                None => ImageSource::Procedural {
                    size: run.data.source_size,
                },
            }),
            Mode::Finetune => {
                let items: Vec<LabelledItem> = match &run.data.dataset_dir {
                    Some(dir) => load_matting_dir(dir)?
                        .into_iter()
                        .map(|r| LabelledItem { fg: r.fg, alpha: r.alpha })
                        .collect(),
                    None => toy_matting_dataset(run.data.toy_items, run.crop_size(), run.data.toy_seed)?
                        .items
                        .into_iter()
                        .map(|i| LabelledItem { fg: i.fg, alpha: i.alpha })
                        .collect(),
                };
                let split = items.len() * 4 / 5;
                if split == 0 || split == items.len() {
                    return Err(Error::Config(format!(
                        "{} labelled items cannot be split 80/20 into non-empty parts",
                        items.len()
                    )));
                }
                let mut train = items;
                let test = train.split_off(split);
                Data::Labelled { train, test }
            }
        };
        let pool = if run.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(run.workers)
                    .build()
                    .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        let state = OptimizerState::new(&model.params);
        Ok(Self {
            run,
            model,
            state,
            data,
            pool,
            load_report,
        })
    }

    /// Continues a run from a checkpoint written by [`Trainer::save`].
    pub fn resume(run: RunConfig, checkpoint: &Path) -> Result<Self> {
        let mut trainer = Trainer::new(RunConfig {
            init_checkpoint: None,
            ..run
        })?;
        let net = load_checkpoint(checkpoint)?.into_net()?;
        if net.config != trainer.model.config {
            return Err(Error::Checkpoint("checkpoint model config differs from the run".into()));
        }
        let state = OptimizerState::load(&optimizer_path(checkpoint))?;
        if state.names.len() != net.params.len() {
            return Err(Error::Checkpoint("optimizer state does not match checkpoint".into()));
        }
        trainer.model = net;
        trainer.state = state;
        Ok(trainer)
    }

    pub fn run_config(&self) -> &RunConfig {
        &self.run
    }

    pub fn model(&self) -> &MattingNet<f32> {
        &self.model
    }

    pub fn optimizer_state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn load_report(&self) -> Option<&LoadReport> {
        self.load_report.as_ref()
    }

    /// Number of optimizer steps taken so far.
    pub fn steps_done(&self) -> usize {
        self.state.step as usize
    }

    /// The training sample for a global sample index.
    pub fn sample(&self, index: u64) -> Result<CompositeSample> {
        let seed = mix_seed(mix_seed(self.run.seed, SAMPLE_STREAM), index);
        let mut rng = rng_from_seed(seed);
        match &self.data {
            Data::Pretext(source) => pretext_sample(source, &self.run.sample, seed),
            Data::Labelled { train, .. } => {
                let item = &train[rng.gen_range(0..train.len())];
                let size = self.run.crop_size();
                let (fg, alpha) = if item.fg.height() == size && item.fg.width() == size {
                    (item.fg.clone(), item.alpha.clone())
                } else {
                    let mut crop_rng = rng.clone();
                    let fg = random_crop(&item.fg, size, &mut rng)?;
                    let alpha = random_crop(&item.alpha, size, &mut crop_rng)?;
                    (fg, alpha)
                };
                let background = background_for(size, size, &mut rng)?;
                let trimap = make_finetune_trimap(&alpha, &mut rng)?;
                let fused = composite(&fg, &background, &alpha)?;
                Ok(CompositeSample {
                    fused,
                    foreground: fg,
                    background,
                    alpha,
                    trimap,
                    seed,
                })
            }
        }
    }

    fn sample_gradients(&self, index: u64) -> Result<(Vec<Tensor<f32>>, LossBreakdown)> {
        let sample = self.sample(index)?;
        sample_gradients(&self.model, &sample, &self.run.loss_weights)
    }

    /// One optimizer step over a batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.steps_done();
        if step >= self.run.steps {
            return Err(Error::invalid(format!("run already finished {} steps", self.run.steps)));
        }
        let lr = lr_at(step, &self.run.schedule(), self.run.optim.base_lr)?;
        let batch = self.run.batch;
        let first = (step * batch) as u64;
        let results: Vec<Result<(Vec<Tensor<f32>>, LossBreakdown)>> = match &self.pool {
            Some(pool) => pool.install(|| {
                (0..batch as u64)
                    .into_par_iter()
                    .map(|b| self.sample_gradients(first + b))
                    .collect()
            }),
            None => (0..batch as u64).map(|b| self.sample_gradients(first + b)).collect(),
        };
        let mut grads: Option<Vec<Tensor<f32>>> = None;
        let mut loss = LossBreakdown::default();
        for r in results {
            let (g, br) = r.map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
                other => other,
            })?;
            loss.accumulate(&br);
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                            *x += *y;
                        }
                    }
                }
            }
        }
        let mut grads = grads.expect("batch is non-empty");
        let inv = 1.0 / batch as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= inv;
            }
        }
        let loss = loss.scaled(1.0 / batch as f64);
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("step {step}: non-finite loss")));
        }
        let grad_norm = clip_global_norm(&mut grads, self.run.clip_norm);
        optimizer_step(&mut self.model.params, &grads, &mut self.state, &self.run.optim, lr)?;
        Ok(StepRecord {
            step,
            lr,
            loss,
            grad_norm,
        })
    }

    /// Mean metrics over the held-out split with fixed backgrounds and trimaps.
    pub fn evaluate(&self) -> Result<EvalResult> {
        let Data::Labelled { test, .. } = &self.data else {
            return Err(Error::invalid("evaluation needs a labelled dataset"));
        };
        let results = test
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let (fused, trimap) = eval_inputs(item, self.run.data.eval_seed, i)?;
                let pred = self.model.predict(&fused, &trimap)?;
                evaluate(&pred, &item.alpha, &trimap, DEFAULT_PAD_TO)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalResult::mean(&results))
    }

    /// Writes the model checkpoint (with manifest) and `<path>.opt`.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.model)?;
        self.state.save(&optimizer_path(path))
    }
}

fn eval_inputs(item: &LabelledItem, eval_seed: u64, index: usize) -> Result<(PixelGrid, Trimap)> {
    let mut rng = rng_from_seed(mix_seed(eval_seed, index as u64));
    let (h, w) = (item.alpha.height(), item.alpha.width());
    let background = background_for(h, w, &mut rng)?;
    let trimap = make_finetune_trimap(&item.alpha, &mut rng)?;
    Ok((composite(&item.fg, &background, &item.alpha)?, trimap))
}

/// Loss and parameter gradients for one sample: forward, copy-rule merge, total loss, backward.
pub fn sample_gradients(
    model: &MattingNet<f32>,
    sample: &CompositeSample,
    weights: &LossWeights,
) -> Result<(Vec<Tensor<f32>>, LossBreakdown)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.constant(model.input_tensor(&sample.fused, &sample.trimap)?);
    let raw = model.forward(&mut tape, &bound, x)?;
    let merged = merge_with_trimap(&mut tape, raw, &sample.trimap)?;
    let targets = LossTargets::from_sample(sample);
    let (loss, breakdown) = total_loss(&mut tape, merged, &targets, weights)?;
    tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .zip(&model.params)
        .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.tensor.shape().to_vec())))
        .collect();
    Ok((grads, breakdown))
}

pub fn optimizer_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub evals: Vec<(usize, EvalResult)>,
    pub checkpoint: PathBuf,
    pub load_report: Option<LoadReport>,
}

impl TrainSummary {
    /// Mean total loss over records `[from, to)`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let slice = &self.records[from.min(self.records.len())..to.min(self.records.len())];
        slice.iter().map(|r| r.loss.total).sum::<f64>() / slice.len().max(1) as f64
    }

    pub fn final_eval(&self) -> Option<&EvalResult> {
        self.evals.last().map(|(_, e)| e)
    }
}

pub const METRICS_HEADER: &str = "step,lr,l1,comp,lap,total";
pub const EVAL_HEADER: &str = "step,sad,mse,grad,conn";

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs `trainer` to completion, writing `config.toml`, `metrics.csv`,
/// `eval.csv` (fine-tuning) and `model.ckpt` under the run's `out_dir`.
pub fn run_to_end(mut trainer: Trainer) -> Result<TrainSummary> {
    let run = trainer.run.clone();
    let out = &run.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), &run.to_toml()?)?;
    let labelled = matches!(trainer.data, Data::Labelled { .. });
    let mut summary = TrainSummary {
        load_report: trainer.load_report.clone(),
        ..TrainSummary::default()
    };
    if let Some(report) = &summary.load_report {
        let text = serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
        write_file(&out.join("load_report.json"), &text)?;
    }
    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut evals = format!("{EVAL_HEADER}\n");
    while trainer.steps_done() < run.steps {
        let rec = trainer.step()?;
        let done = rec.step + 1;
        writeln!(
            metrics,
            "{},{:.6e},{:.6},{:.6},{:.6},{:.6}",
            rec.step, rec.lr, rec.loss.l1, rec.loss.comp, rec.loss.lap, rec.loss.total
        )
        .expect("write to string");
        if done % 100 == 0 || done == run.steps {
            log::info!("step {done}/{} loss {:.4} lr {:.2e}", run.steps, rec.loss.total, rec.lr);
        }
        summary.records.push(rec);
        let eval_now = labelled && ((run.eval_every > 0 && done % run.eval_every == 0) || done == run.steps);
        if eval_now {
            let e = trainer.evaluate()?;
            writeln!(evals, "{done},{:.6},{:.6},{:.6},{:.6}", e.sad, e.mse, e.grad, e.conn).expect("write to string");
            log::info!("step {done}: SAD {:.4} MSE {:.4}", e.sad, e.mse);
            summary.evals.push((done, e));
        }
        if run.checkpoint_every > 0 && done % run.checkpoint_every == 0 && done < run.steps {
            trainer.save(&out.join(format!("model_step{done}.ckpt")))?;
        }
    }
    write_file(&out.join("metrics.csv"), &metrics)?;
    if labelled {
        write_file(&out.join("eval.csv"), &evals)?;
    }
    let ckpt = out.join("model.ckpt");
    trainer.save(&ckpt)?;
    summary.checkpoint = ckpt;
    Ok(summary)
}

pub fn pretrain(run: RunConfig) -> Result<TrainSummary> {
    if run.mode != Mode::Pretrain {
        return Err(Error::Config("pretrain needs mode = \"pretrain\"".into()));
    }
    run_to_end(Trainer::new(run)?)
}

pub fn finetune(run: RunConfig) -> Result<TrainSummary> {
    if run.mode != Mode::Finetune {
        return Err(Error::Config("finetune needs mode = \"finetune\"".into()));
    }
    run_to_end(Trainer::new(run)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub theta: f64,
    pub seed: u64,
    pub result: EvalResult,
}

pub const ABLATION_HEADER: &str = "theta,seed,sad,mse,grad,conn";

/// For each θ (with β = γ = (1 − θ)/2) and seed: pre-train, fine-tune from
/// that checkpoint, evaluate. Writes `ablation.csv` with per-run rows and a
/// `mean` row per θ.
pub fn ablate_unknown_ratio(
    thetas: &[f64],
    seeds: &[u64],
    pretrain_template: &RunConfig,
    finetune_template: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    if thetas.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one ratio and one seed"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    let mut csv = format!("{ABLATION_HEADER}\n");
    for &theta in thetas {
        let ratios = TrimapRatios::from_unknown(theta)?;
        let mut per_theta = Vec::new();
        for &seed in seeds {
            let dir = out_dir.join(format!("theta_{theta}_seed_{seed}"));
            let mut pre = pretrain_template.clone();
            pre.mode = Mode::Pretrain;
            pre.seed = seed;
            pre.sample.ratios = ratios;
            pre.out_dir = dir.join("pretrain");
            let pre_summary = pretrain(pre)?;
            let mut fine = finetune_template.clone();
            fine.mode = Mode::Finetune;
            fine.seed = seed;
            fine.init_checkpoint = Some(pre_summary.checkpoint.clone());
            fine.out_dir = dir.join("finetune");
            let fine_summary = finetune(fine)?;
            let result = *fine_summary
                .final_eval()
                .ok_or_else(|| Error::invalid("fine-tuning produced no evaluation"))?;
            writeln!(
                csv,
                "{theta},{seed},{:.6},{:.6},{:.6},{:.6}",
                result.sad, result.mse, result.grad, result.conn
            )
            .expect("write to string");
            per_theta.push(result);
            rows.push(AblationRow { theta, seed, result });
        }
        let m = EvalResult::mean(&per_theta);
        writeln!(csv, "{theta},mean,{:.6},{:.6},{:.6},{:.6}", m.sad, m.mse, m.grad, m.conn)
            .expect("write to string");
    }
    write_file(&out_dir.join("ablation.csv"), &csv)?;
    Ok(rows)
}

/// Copies a checkpoint's stage into a fresh model; exposed for tools that
/// compare initialisations.
pub fn model_from_checkpoint(path: &Path) -> Result<MattingNet<f32>> {
    load_checkpoint(path)?.into_net()
}

/// Re-encodes a loaded checkpoint; used to check save → load → save stability.
pub fn checkpoint_bytes(net: &MattingNet<f32>) -> Result<Vec<u8>> {
    Checkpoint::from_net(net).to_bytes()
}
