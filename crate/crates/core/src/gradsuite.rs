//! The full finite-difference suite: every tape op on its own, then the
//! training objective (total loss of the merged network output) end to end.
//!
//! Each op is checked as `sum(op(x) · r)` with a random constant `r`, so no
//! output entry gets a trivially uniform gradient.

use rand::Rng as _;

use crate::data_io::{procedural_texture, TextureKind};
use crate::error::Result;
use crate::losses::{total_loss, LossTargets, LossWeights};
use crate::model::{merge_with_trimap, Bound, MattingNet, ModelConfig};
use crate::seed::{mix_seed, rng_from_seed, Rng};
use crate::synth::{make_pretrain_sample, AugmentConfig, SampleConfig, Strategy, TrimapRatios};
use crate::tensor::{finite_diff_check_with, BackwardFault, GradCheckOptions, Parameter, Tape, Tensor, Var};

pub const SUITE_TOLERANCE: f64 = 1e-3;
pub const OP_STEP: f64 = 1e-3;
/// The objective contains ReLU and |·| kinks; a small step keeps probes off them.
pub const OBJECTIVE_STEP: f64 = 1e-6;
pub const DEFAULT_SUITE_SEEDS: u64 = 20;
/// Inputs to ReLU and |·| are kept at least this far from the kink.
const KINK_MARGIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteRow {
    pub check: String,
    pub seeds: usize,
    pub max_rel_err: f64,
    /// Parameter and seed where the worst error occurred.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<22} {:>6} {:>12}  {:<6} worst\n", "check", "seeds", "max_rel_err", "result");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<22} {:>6} {:>12.3e}  {:<6} {}\n",
                r.check,
                r.seeds,
                r.max_rel_err,
                if r.passed { "pass" } else { "FAIL" },
                r.worst
            ));
        }
        out
    }
}

fn random_tensor(shape: &[usize], rng: &mut Rng, away_from_zero: bool) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-1.0..=1.0);
            if away_from_zero && v.abs() < KINK_MARGIN {
                v.signum() * KINK_MARGIN + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    inputs: &'static [&'static [usize]],
    output: &'static [usize],
    kinked: bool,
    op: OpFn,
}

const X4: &[usize] = &[1, 2, 4, 4];

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "conv2d 3x3 s1 p1",
            inputs: &[&[1, 2, 5, 5], &[3, 2, 3, 3], &[3]],
            output: &[1, 3, 5, 5],
            kinked: false,
            op: |t, v| t.conv2d(v[0], v[1], v[2], 1, 1),
        },
        OpCase {
            name: "conv2d 3x3 s2 p1",
            inputs: &[&[2, 2, 6, 6], &[3, 2, 3, 3], &[3]],
            output: &[2, 3, 3, 3],
            kinked: false,
            op: |t, v| t.conv2d(v[0], v[1], v[2], 2, 1),
        },
        OpCase {
            name: "conv2d 1x1",
            inputs: &[&[1, 3, 4, 4], &[2, 3, 1, 1], &[2]],
            output: &[1, 2, 4, 4],
            kinked: false,
            op: |t, v| t.conv2d(v[0], v[1], v[2], 1, 0),
        },
        OpCase {
            name: "relu",
            inputs: &[X4],
            output: X4,
            kinked: true,
            op: |t, v| Ok(t.relu(v[0])),
        },
        OpCase {
            name: "sigmoid",
            inputs: &[X4],
            output: X4,
            kinked: false,
            op: |t, v| Ok(t.sigmoid(v[0])),
        },
        OpCase {
            name: "abs",
            inputs: &[X4],
            output: X4,
            kinked: true,
            op: |t, v| Ok(t.abs(v[0])),
        },
        OpCase {
            name: "scale",
            inputs: &[X4],
            output: X4,
            kinked: false,
            op: |t, v| Ok(t.scale(v[0], -1.7)),
        },
        OpCase {
            name: "sum",
            inputs: &[X4],
            output: &[1],
            kinked: false,
            op: |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
        },
        OpCase {
            name: "add",
            inputs: &[X4, X4],
            output: X4,
            kinked: false,
            op: |t, v| t.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            inputs: &[X4, X4],
            output: X4,
            kinked: false,
            op: |t, v| t.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            inputs: &[X4, X4],
            output: X4,
            kinked: false,
            op: |t, v| t.mul(v[0], v[1]),
        },
        OpCase {
            name: "concat_channels",
            inputs: &[X4, &[1, 3, 4, 4]],
            output: &[1, 5, 4, 4],
            kinked: false,
            op: |t, v| t.concat_channels(v[0], v[1]),
        },
        OpCase {
            name: "upsample2x",
            inputs: &[&[1, 2, 3, 3]],
            output: &[1, 2, 6, 6],
            kinked: false,
            op: |t, v| t.upsample2x(v[0]),
        },
        OpCase {
            name: "blur",
            inputs: &[&[1, 2, 5, 6]],
            output: &[1, 2, 5, 6],
            kinked: false,
            op: |t, v| t.blur(v[0]),
        },
        OpCase {
            name: "downsample2",
            inputs: &[&[1, 2, 5, 6]],
            output: &[1, 2, 3, 3],
            kinked: false,
            op: |t, v| t.downsample2(v[0]),
        },
        OpCase {
            name: "crop",
            inputs: &[&[1, 2, 6, 6]],
            output: &[1, 2, 4, 5],
            kinked: false,
            op: |t, v| t.crop(v[0], 4, 5),
        },
    ]
}

struct Worst {
    err: f64,
    at: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            err: 0.0,
            at: String::new(),
        }
    }

    fn update(&mut self, report: &crate::tensor::GradCheckReport, seed: u64) {
        for p in &report.params {
            if p.max_rel_err > self.err || self.at.is_empty() {
                self.err = p.max_rel_err;
                self.at = format!("{}[{}] seed {seed}", p.name, p.worst_index);
            }
        }
    }

    fn row(self, check: &str, seeds: usize, tolerance: f64) -> SuiteRow {
        SuiteRow {
            check: check.to_string(),
            seeds,
            passed: self.err < tolerance,
            max_rel_err: self.err,
            worst: self.at,
        }
    }
}

fn check_op(case: &OpCase, seeds: u64, fault: Option<BackwardFault>) -> Result<SuiteRow> {
    let mut worst = Worst::new();
    for seed in 0..seeds {
        let mut rng = rng_from_seed(mix_seed(seed, 0x6f70));
        let params: Vec<Parameter<f64>> = case
            .inputs
            .iter()
            .enumerate()
            .map(|(i, s)| Parameter::new(format!("in{i}"), random_tensor(s, &mut rng, case.kinked)))
            .collect();
        let weights = random_tensor(case.output, &mut rng, false);
        let op = case.op;
        let report = finite_diff_check_with(
            |tape, vars| {
                if let Some(f) = fault {
                    tape.inject_fault(f);
                }
                let y = op(tape, vars)?;
                let r = tape.constant(weights.clone());
                let weighted = tape.mul(y, r)?;
                Ok(tape.sum(weighted))
            },
            &params,
            GradCheckOptions {
                step: OP_STEP,
                tolerance: SUITE_TOLERANCE,
                max_probes: None,
            },
        )?;
        worst.update(&report, seed);
    }
    Ok(worst.row(case.name, seeds as usize, SUITE_TOLERANCE))
}

/// Tiny network and 16×16 pretext sample used by the objective check.
const OBJECTIVE_MODEL: ModelConfig = ModelConfig {
    base_channels: 4,
    depth: 2,
    input_channels: 6,
    skip_connections: true,
};
const OBJECTIVE_SIZE: usize = 16;
const OBJECTIVE_PROBES: usize = 12;

fn check_objective(seeds: u64, fault: Option<BackwardFault>) -> Result<SuiteRow> {
    let mut worst = Worst::new();
    let sample_cfg = SampleConfig {
        grid: 4,
        ratios: TrimapRatios::default(),
        augment: AugmentConfig::identity(OBJECTIVE_SIZE),
        strategy: Strategy::Pixel,
    };
    for seed in 0..seeds {
        let mut rng = rng_from_seed(mix_seed(seed, 0x6f626a));
        let mut net = MattingNet::<f32>::build(OBJECTIVE_MODEL, &mut rng)?.cast::<f64>();
        // Zero-initialised biases put dead ReLUs exactly on their kink.
        for p in net.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
            p.tensor = random_tensor(p.tensor.shape(), &mut rng, false).map(|v| 0.1 * v);
        }
        let fg = procedural_texture(TextureKind::random(&mut rng), OBJECTIVE_SIZE, &mut rng)?;
        let bg = procedural_texture(TextureKind::random(&mut rng), OBJECTIVE_SIZE, &mut rng)?;
        let sample = make_pretrain_sample(&fg, &bg, &sample_cfg, seed)?;
        let targets = LossTargets::<f64>::from_sample(&sample);
        let input = net.input_tensor(&sample.fused, &sample.trimap)?;
        let report = finite_diff_check_with(
            |tape, vars| {
                if let Some(f) = fault {
                    tape.inject_fault(f);
                }
                let bound = Bound::from_vars(vars.to_vec());
                let x = tape.constant(input.clone());
                let raw = net.forward(tape, &bound, x)?;
                let merged = merge_with_trimap(tape, raw, &sample.trimap)?;
                Ok(total_loss(tape, merged, &targets, &LossWeights::default())?.0)
            },
            &net.params,
            GradCheckOptions {
                step: OBJECTIVE_STEP,
                tolerance: SUITE_TOLERANCE,
                max_probes: Some(OBJECTIVE_PROBES),
            },
        )?;
        worst.update(&report, seed);
    }
    Ok(worst.row("objective", seeds as usize, SUITE_TOLERANCE))
}

/// Runs every check over seeds `0..seeds`. `fault` corrupts one backward
/// rule everywhere, as a negative control.
pub fn run_suite(seeds: u64, fault: Option<BackwardFault>) -> Result<SuiteReport> {
    let mut rows = op_cases()
        .iter()
        .map(|c| check_op(c, seeds, fault))
        .collect::<Result<Vec<_>>>()?;
    rows.push(check_objective(seeds, fault)?);
    Ok(SuiteReport {
        rows,
        tolerance: SUITE_TOLERANCE,
    })
}
