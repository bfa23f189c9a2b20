//! Training losses over the unknown region: masked L1, composition and
//! Laplacian-pyramid losses, and their weighted sum.
//!
//! All losses take `[1, 1, H, W]` alpha variables on a [`Tape`]; targets are
//! plain tensors bundled in [`LossTargets`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{CompositeSample, Label, Trimap};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const MASK_EPS: f64 = 1e-6;
pub const DEFAULT_PYRAMID_LEVELS: usize = 5;

/// A scalar loss and whether its mask was empty (in which case the value is 0).
#[derive(Clone, Copy, Debug)]
pub struct MaskedLoss {
    pub value: Var,
    pub empty_mask: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub comp: f64,
    pub lap: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            comp: 1.0,
            lap: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub comp: f64,
    pub lap: f64,
    pub total: f64,
    /// The sample had no unknown pixels.
    pub degenerate: bool,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.l1 += other.l1;
        self.comp += other.comp;
        self.lap += other.lap;
        self.total += other.total;
        self.degenerate |= other.degenerate;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            l1: self.l1 * factor,
            comp: self.comp * factor,
            lap: self.lap * factor,
            total: self.total * factor,
            degenerate: self.degenerate,
        }
    }
}

/// Everything the losses compare a prediction against, as `[1, C, H, W]` tensors.
#[derive(Clone, Debug)]
pub struct LossTargets<T: Scalar = f32> {
    pub alpha: Tensor<T>,
    pub foreground: Tensor<T>,
    pub background: Tensor<T>,
    pub fused: Tensor<T>,
    pub unknown: Tensor<T>,
    pub trimap: Trimap,
}

impl<T: Scalar> LossTargets<T> {
    pub fn from_sample(sample: &CompositeSample) -> Self {
        Self {
            alpha: sample.alpha.to_tensor(),
            foreground: sample.foreground.to_tensor(),
            background: sample.background.to_tensor(),
            fused: sample.fused.to_tensor(),
            unknown: sample.trimap.unknown_mask().to_tensor(),
            trimap: sample.trimap.clone(),
        }
    }

    pub fn unknown_count(&self) -> usize {
        self.trimap.count(Label::Unknown)
    }
}

fn check_same(tape: &Tape<impl Scalar>, pred: Var, what: &str, shape: &[usize]) -> Result<()> {
    if tape.shape(pred) != shape {
        return Err(Error::invalid(format!(
            "{what} shape {shape:?} does not match prediction {:?}",
            tape.shape(pred)
        )));
    }
    Ok(())
}

fn mask_count<T: Scalar>(mask: &Tensor<T>) -> usize {
    mask.data().iter().filter(|&&v| v != T::zero()).count()
}

/// Σ_mask |pred − gt| / (|mask| + ε).
pub fn masked_l1<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    gt_alpha: &Tensor<T>,
    unknown_mask: &Tensor<T>,
) -> Result<MaskedLoss> {
    check_same(tape, pred, "ground-truth alpha", gt_alpha.shape())?;
    check_same(tape, pred, "mask", unknown_mask.shape())?;
    let count = mask_count(unknown_mask);
    let gt = tape.constant(gt_alpha.clone());
    let mask = tape.constant(unknown_mask.clone());
    let diff = tape.sub(pred, gt)?;
    let masked = tape.mul(diff, mask)?;
    let abs = tape.abs(masked);
    let sum = tape.sum(abs);
    let value = tape.scale(sum, T::from_f64(1.0 / (count as f64 + MASK_EPS)));
    Ok(MaskedLoss {
        value,
        empty_mask: count == 0,
    })
}

/// Mean over masked pixels and 3 channels of |pred·F + (1 − pred)·B − I|.
///
/// The recomposition uses the same operation order as
/// [`crate::synth::composite`], so the generating alpha gives exactly 0.
pub fn composition_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    foreground: &Tensor<T>,
    background: &Tensor<T>,
    fused: &Tensor<T>,
    unknown_mask: &Tensor<T>,
) -> Result<MaskedLoss> {
    check_same(tape, pred, "mask", unknown_mask.shape())?;
    let [n, _, h, w] = tape.value(pred).dims4()?;
    let rgb = [n, 3, h, w];
    for (what, t) in [("foreground", foreground), ("background", background), ("fused image", fused)] {
        if t.shape() != rgb {
            return Err(Error::invalid(format!(
                "{what} shape {:?} does not match {rgb:?}",
                t.shape()
            )));
        }
    }
    let count = mask_count(unknown_mask);
    let pair = tape.concat_channels(pred, pred)?;
    let pred3 = tape.concat_channels(pair, pred)?;
    let ones = tape.constant(Tensor::full(rgb.to_vec(), T::one()));
    let inv = tape.sub(ones, pred3)?;
    let f = tape.constant(foreground.clone());
    let b = tape.constant(background.clone());
    let i = tape.constant(fused.clone());
    let pf = tape.mul(pred3, f)?;
    let ib = tape.mul(inv, b)?;
    let recomposed = tape.add(pf, ib)?;
    let diff = tape.sub(recomposed, i)?;
    let mask1 = tape.constant(unknown_mask.clone());
    let mask_pair = tape.concat_channels(mask1, mask1)?;
    let mask3 = tape.concat_channels(mask_pair, mask1)?;
    let masked = tape.mul(diff, mask3)?;
    let abs = tape.abs(masked);
    let sum = tape.sum(abs);
    let value = tape.scale(sum, T::from_f64(1.0 / (3.0 * count as f64 + MASK_EPS)));
    Ok(MaskedLoss {
        value,
        empty_mask: count == 0,
    })
}

/// Copy rule: keep `pred` on unknown pixels, take `gt` everywhere else.
/// Exact in both branches, and idempotent.
pub fn merge_with_copy_rule<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    gt_alpha: &Tensor<T>,
    unknown_mask: &Tensor<T>,
) -> Result<Var> {
    check_same(tape, pred, "ground-truth alpha", gt_alpha.shape())?;
    check_same(tape, pred, "mask", unknown_mask.shape())?;
    let known: Vec<T> = gt_alpha
        .data()
        .iter()
        .zip(unknown_mask.data())
        .map(|(&g, &m)| if m != T::zero() { T::zero() } else { g })
        .collect();
    let known = tape.constant(Tensor::new(gt_alpha.shape().to_vec(), known)?);
    let mask = tape.constant(unknown_mask.clone());
    let kept = tape.mul(pred, mask)?;
    tape.add(kept, known)
}

fn check_levels(h: usize, w: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    let min = 1usize << (levels - 1).min(63);
    if h < min || w < min {
        return Err(Error::invalid(format!(
            "{levels} pyramid levels need at least {min}x{min} pixels, got {h}x{w}"
        )));
    }
    Ok(())
}

/// `crop(blur(upsample2x(g)), h, w)`.
fn pyramid_up<T: Scalar>(tape: &mut Tape<T>, g: Var, h: usize, w: usize) -> Result<Var> {
    let up = tape.upsample2x(g)?;
    let blurred = tape.blur(up)?;
    tape.crop(blurred, h, w)
}

/// Band-pass levels of `x` on the tape; the last entry is the coarsest Gaussian.
pub fn laplacian_pyramid_vars<T: Scalar>(tape: &mut Tape<T>, x: Var, levels: usize) -> Result<Vec<Var>> {
    let [_, _, h, w] = tape.value(x).dims4()?;
    check_levels(h, w, levels)?;
    let mut bands = Vec::with_capacity(levels);
    let mut g = x;
    for _ in 1..levels {
        let [_, _, gh, gw] = tape.value(g).dims4()?;
        let blurred = tape.blur(g)?;
        let next = tape.downsample2(blurred)?;
        let up = pyramid_up(tape, next, gh, gw)?;
        bands.push(tape.sub(g, up)?);
        g = next;
    }
    bands.push(g);
    Ok(bands)
}

pub fn laplacian_pyramid<T: Scalar>(x: &Tensor<T>, levels: usize) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let bands = laplacian_pyramid_vars(&mut tape, v, levels)?;
    Ok(bands.into_iter().map(|b| tape.value(b).clone()).collect())
}

/// Inverts [`laplacian_pyramid`]: `L0 + up(L1 + up(L2 + …))`.
pub fn reconstruct_pyramid<T: Scalar>(bands: &[Tensor<T>]) -> Result<Tensor<T>> {
    let Some((last, rest)) = bands.split_last() else {
        return Err(Error::invalid("empty pyramid"));
    };
    let mut tape = Tape::new();
    let mut g = tape.constant(last.clone());
    for band in rest.iter().rev() {
        let [_, _, h, w] = band.dims4()?;
        let up = pyramid_up(&mut tape, g, h, w)?;
        let b = tape.constant(band.clone());
        g = tape.add(b, up)?;
    }
    Ok(tape.value(g).clone())
}

/// Σ_{i=1..levels} 2^{i−1} · mean|L^i(pred) − L^i(gt)| after the copy-rule merge.
///
/// The pyramid is linear, so it is taken once on the difference.
pub fn laplacian_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    gt_alpha: &Tensor<T>,
    trimap: &Trimap,
    levels: usize,
) -> Result<Var> {
    let unknown = trimap.unknown_mask().to_tensor::<T>();
    let merged = merge_with_copy_rule(tape, pred, gt_alpha, &unknown)?;
    let gt = tape.constant(gt_alpha.clone());
    let diff = tape.sub(merged, gt)?;
    let bands = laplacian_pyramid_vars(tape, diff, levels)?;
    let mut total: Option<Var> = None;
    for (i, band) in bands.into_iter().enumerate() {
        let numel = tape.value(band).numel() as f64;
        let abs = tape.abs(band);
        let sum = tape.sum(abs);
        let term = tape.scale(sum, T::from_f64((1u64 << i) as f64 / numel));
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(total.expect("at least one level"))
}

/// Weighted sum of the three losses and its per-term breakdown.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    targets: &LossTargets<T>,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let l1 = masked_l1(tape, pred, &targets.alpha, &targets.unknown)?;
    let comp = composition_loss(
        tape,
        pred,
        &targets.foreground,
        &targets.background,
        &targets.fused,
        &targets.unknown,
    )?;
    let lap = laplacian_loss(tape, pred, &targets.alpha, &targets.trimap, DEFAULT_PYRAMID_LEVELS)?;
    let weighted = |tape: &mut Tape<T>, v: Var, w: f64| {
        if w == 1.0 {
            v
        } else {
            tape.scale(v, T::from_f64(w))
        }
    };
    let a = weighted(tape, l1.value, weights.l1);
    let b = weighted(tape, comp.value, weights.comp);
    let c = weighted(tape, lap, weights.lap);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    let read = |v: Var| tape.value(v).data()[0].as_f64();
    let (l1v, compv, lapv) = (read(l1.value), read(comp.value), read(lap));
    let breakdown = LossBreakdown {
        l1: l1v,
        comp: compv,
        lap: lapv,
        total: weights.l1 * l1v + weights.comp * compv + weights.lap * lapv,
        degenerate: l1.empty_mask,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss: {breakdown:?}")));
    }
    Ok((total, breakdown))
}
