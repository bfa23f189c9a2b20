//! A small U-shaped encoder–decoder that predicts an alpha matte from an
//! image and its one-hot trimap.
//!
//! Layout, for `depth = D` and `base = b`:
//!
//! * `enc.s` (s = 0..D): 3×3 stride-2 conv → ReLU → 3×3 conv → ReLU, `b·2^s` channels.
//! * `dec.d` (d = D−1..0): upsample ×2 → 3×3 conv `up` → ReLU → concat skip →
//!   3×3 conv `fuse` → ReLU. Stage `d > 0` has `b·2^(d−1)` channels and skips
//!   from `enc.(d−1)`; stage 0 runs at full resolution with `max(b/2, 1)`
//!   channels and skips from the network input.
//! * `head`: 1×1 conv → sigmoid.
//!
//! Input channels are RGB followed by the trimap one-hot (background,
//! unknown, foreground). A model with `input_channels = 3` sees RGB only.

mod checkpoint;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::losses::merge_with_copy_rule;
use crate::seed::Rng;
use crate::synth::{Label, Trimap};
use crate::tensor::{Parameter, Scalar, Tape, Tensor, Var};

pub use checkpoint::{
    load_checkpoint, load_into, save_checkpoint, Checkpoint, LoadReport, LoadStage, CHECKPOINT_MAGIC,
};

pub const INPUT_PAD_MULTIPLE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub depth: usize,
    /// 6 for image + trimap, 3 for image only.
    pub input_channels: usize,
    pub skip_connections: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            depth: 3,
            input_channels: 6,
            skip_connections: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.input_channels != 6 && self.input_channels != 3 {
            return Err(Error::Config(format!(
                "input_channels must be 6 (image + trimap) or 3 (image only), got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    pub fn uses_trimap(&self) -> bool {
        self.input_channels == 6
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    fn enc_channels(&self, s: usize) -> usize {
        self.base_channels << s
    }

    fn dec_channels(&self, d: usize) -> usize {
        if d == 0 {
            (self.base_channels / 2).max(1)
        } else {
            self.enc_channels(d - 1)
        }
    }

    fn skip_channels(&self, d: usize) -> usize {
        match (self.skip_connections, d) {
            (false, _) => 0,
            (true, 0) => self.input_channels,
            (true, d) => self.enc_channels(d - 1),
        }
    }

    /// `(name, shape)` of every parameter, in construction order.
    pub fn parameter_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
            specs.push((format!("{name}.weight"), vec![cout, cin, k, k]));
            specs.push((format!("{name}.bias"), vec![cout]));
        };
        let mut cin = self.input_channels;
        for s in 0..self.depth {
            let c = self.enc_channels(s);
            conv(format!("enc.{s}.conv1"), cin, c, 3);
            conv(format!("enc.{s}.conv2"), c, c, 3);
            cin = c;
        }
        for d in (0..self.depth).rev() {
            let c = self.dec_channels(d);
            conv(format!("dec.{d}.up"), cin, c, 3);
            conv(format!("dec.{d}.fuse"), c + self.skip_channels(d), c, 3);
            cin = c;
        }
        conv("head".into(), cin, 1, 1);
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_specs()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MattingNet<T: Scalar = f32> {
    pub config: ModelConfig,
    pub params: Vec<Parameter<T>>,
}

/// Uniform fan-in initialisation: `±sqrt(6 / fan_in)` for hidden convs,
/// `±sqrt(3 / fan_in)` for the head, zero biases.
fn init_tensor<T: Scalar>(name: &str, shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    if name.ends_with(".bias") {
        return Tensor::zeros(shape.to_vec());
    }
    let fan_in: usize = shape[1..].iter().product();
    let gain = if name.starts_with("head.") { 3.0 } else { 6.0 };
    let bound = (gain / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("spec shapes are consistent")
}

/// Parameter handles of one model instance on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles created elsewhere, in [`ModelConfig::parameter_specs`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> MattingNet<T> {
    pub fn build(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = config
            .parameter_specs()
            .into_iter()
            .map(|(name, shape)| {
                let tensor = init_tensor(&name, &shape, rng);
                Parameter::new(name, tensor)
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn cast<U: Scalar>(&self) -> MattingNet<U> {
        MattingNet {
            config: self.config,
            params: self.params.iter().map(Parameter::cast).collect(),
        }
    }

    /// Puts every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.tensor.clone())).collect(),
        }
    }

    /// Raw alpha `[N, 1, H, W]` in (0, 1) from a `[N, C, H, W]` input.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, input: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(input).dims4()?;
        let cfg = &self.config;
        if c != cfg.input_channels {
            return Err(Error::invalid(format!(
                "model expects {} input channels, got {c}",
                cfg.input_channels
            )));
        }
        let m = cfg.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} must be a multiple of {m} in both dimensions"
            )));
        }
        if bound.vars.len() != self.params.len() {
            return Err(Error::invalid("bound parameters do not belong to this model"));
        }
        let mut next = bound.vars.chunks_exact(2);
        let mut conv = |tape: &mut Tape<T>, x: Var, stride: usize, pad: usize| -> Result<Var> {
            let wb = next.next().expect("parameter list matches layout");
            tape.conv2d(x, wb[0], wb[1], stride, pad)
        };
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut x = input;
        for _ in 0..cfg.depth {
            let y = conv(tape, x, 2, 1)?;
            let y = tape.relu(y);
            let y = conv(tape, y, 1, 1)?;
            x = tape.relu(y);
            skips.push(x);
        }
        for d in (0..cfg.depth).rev() {
            let up = tape.upsample2x(x)?;
            let y = conv(tape, up, 1, 1)?;
            let mut y = tape.relu(y);
            if cfg.skip_connections {
                let skip = if d == 0 { input } else { skips[d - 1] };
                y = tape.concat_channels(y, skip)?;
            }
            let y = conv(tape, y, 1, 1)?;
            x = tape.relu(y);
        }
        let logits = conv(tape, x, 1, 0)?;
        Ok(tape.sigmoid(logits))
    }

    /// Model input `[1, C, H, W]` for one image and trimap.
    pub fn input_tensor(&self, fused: &PixelGrid, trimap: &Trimap) -> Result<Tensor<T>> {
        if fused.channels() != 3 {
            return Err(Error::invalid("image must have 3 channels"));
        }
        if fused.height() != trimap.height() || fused.width() != trimap.width() {
            return Err(Error::invalid("image and trimap sizes differ"));
        }
        let rgb = fused.to_tensor::<T>();
        if !self.config.uses_trimap() {
            return Ok(rgb);
        }
        let onehot = trimap.one_hot().to_tensor::<T>();
        let (h, w) = (fused.height(), fused.width());
        let mut data = rgb.into_data();
        data.extend_from_slice(onehot.data());
        Tensor::new(vec![1, 6, h, w], data)
    }

    /// Padded inference: edge-pad to a multiple of 32 (and of `2^depth`),
    /// forward, crop back and apply the copy rule.
    pub fn predict(&self, fused: &PixelGrid, trimap: &Trimap) -> Result<PixelGrid> {
        let (h, w) = (fused.height(), fused.width());
        let multiple = INPUT_PAD_MULTIPLE.max(self.config.size_multiple());
        let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
        let padded_img = fused.pad_edge(ph, pw)?;
        let padded_tri = trimap.pad_edge(ph, pw)?;
        let mut tape = Tape::new();
        let bound = self.bind_constant(&mut tape);
        let x = tape.constant(self.input_tensor(&padded_img, &padded_tri)?);
        let raw = self.forward(&mut tape, &bound, x)?;
        let raw = PixelGrid::from_tensor(tape.value(raw), 0)?.crop(0, 0, h, w)?;
        merge_grid(&raw, trimap)
    }

    fn bind_constant(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.tensor.clone())).collect(),
        }
    }
}

/// Copy rule on the tape: raw prediction on unknown pixels, 1 on foreground, 0 on background.
pub fn merge_with_trimap<T: Scalar>(tape: &mut Tape<T>, raw: Var, trimap: &Trimap) -> Result<Var> {
    let fg = trimap.mask(Label::Foreground).to_tensor::<T>();
    let unknown = trimap.unknown_mask().to_tensor::<T>();
    merge_with_copy_rule(tape, raw, &fg, &unknown)
}

/// Copy rule on a single-channel grid.
pub fn merge_grid(raw: &PixelGrid, trimap: &Trimap) -> Result<PixelGrid> {
    if raw.channels() != 1 || raw.height() != trimap.height() || raw.width() != trimap.width() {
        return Err(Error::invalid("prediction and trimap shapes differ"));
    }
    let data = raw
        .data()
        .iter()
        .zip(trimap.labels())
        .map(|(&a, &l)| match l {
            0 => 0.0,
            2 => 1.0,
            _ => a,
        })
        .collect();
    PixelGrid::new(raw.height(), raw.width(), 1, data)
}
