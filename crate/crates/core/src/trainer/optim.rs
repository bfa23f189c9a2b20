//! Adam / AdamW, the warmup-cosine schedule and global-norm clipping.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Adamw,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl OptimConfig {
    /// AdamW, β = (0.9, 0.95), weight decay 0.05.
    pub fn pretrain(base_lr: f64) -> Self {
        Self {
            kind: OptimKind::Adamw,
            base_lr,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }

    /// Adam, β = (0.5, 0.999), no decay.
    pub fn finetune(base_lr: f64) -> Self {
        Self {
            kind: OptimKind::Adam,
            base_lr,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 0.0,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} is outside [0, 1)")));
            }
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr = {} must be positive", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub floor_lr: f64,
}

impl ScheduleConfig {
    /// Warmup over the first 10% of steps.
    pub fn with_default_warmup(total_steps: usize) -> Self {
        Self {
            total_steps,
            warmup_steps: total_steps / 10,
            floor_lr: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr`, then cosine decay to `floor_lr` at `total_steps`.
pub fn lr_at(step: usize, schedule: &ScheduleConfig, base_lr: f64) -> Result<f64> {
    schedule.validate()?;
    if step > schedule.total_steps {
        return Err(Error::invalid(format!(
            "step {step} is beyond the schedule's {} steps",
            schedule.total_steps
        )));
    }
    let warm = schedule.warmup_steps;
    if step < warm {
        return Ok(base_lr * (step + 1) as f64 / warm as f64);
    }
    let progress = (step - warm) as f64 / (schedule.total_steps - warm) as f64;
    let floor = schedule.floor_lr;
    Ok(floor + 0.5 * (base_lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// First and second moments per parameter, plus the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

pub const OPTIMIZER_MAGIC: &[u8; 8] = b"MATOPTS1";

impl OptimizerState {
    pub fn new(params: &[Parameter<f32>]) -> Self {
        Self {
            step: 0,
            names: params.iter().map(|p| p.name.clone()).collect(),
            m: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = OPTIMIZER_MAGIC.to_vec();
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.names.len() as u32).to_le_bytes());
        for ((name, m), v) in self.names.iter().zip(&self.m).zip(&self.v) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.len() as u32).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 || &bytes[..8] != OPTIMIZER_MAGIC {
            return Err(Error::Checkpoint("not an optimizer state file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::Checkpoint("optimizer state checksum mismatch".into()));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            if body.len() - pos < n {
                return Err(Error::Decode {
                    offset: pos as u64,
                    message: "truncated optimizer state".into(),
                });
            }
            pos += n;
            Ok(&body[pos - n..pos])
        };
        let step = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut state = Self {
            step,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        };
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("optimizer state name is not UTF-8".into()))?;
            let n = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let floats = |raw: &[u8]| -> Vec<f32> {
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect()
            };
            let m = floats(take(n * 4)?);
            let v = floats(take(n * 4)?);
            state.names.push(name);
            state.m.push(m);
            state.v.push(v);
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    fn check_matches(&self, params: &[Parameter<f32>]) -> Result<()> {
        if self.names.len() != params.len()
            || params
                .iter()
                .zip(&self.names)
                .zip(&self.m)
                .any(|((p, n), m)| &p.name != n || p.tensor.numel() != m.len())
        {
            return Err(Error::invalid("optimizer state does not match the parameters"));
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor<f32>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && max_norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One Adam/AdamW update with bias correction.
///
/// AdamW first applies decoupled decay `p ← p·(1 − lr·wd)`.
pub fn optimizer_step(
    params: &mut [Parameter<f32>],
    grads: &[Tensor<f32>],
    state: &mut OptimizerState,
    config: &OptimConfig,
    lr: f64,
) -> Result<()> {
    state.check_matches(params)?;
    if grads.len() != params.len() {
        return Err(Error::invalid("one gradient per parameter is required"));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.shape() != p.tensor.shape() {
            return Err(Error::invalid(format!("gradient shape mismatch for {}", p.name)));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {}[{i}]", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = match config.kind {
        OptimKind::Adamw => 1.0 - lr * config.weight_decay,
        OptimKind::Adam => 1.0,
    };
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j] as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + config.eps);
            *w = (*w as f64 * decay - update) as f32;
        }
    }
    Ok(())
}
