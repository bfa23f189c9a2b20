//! SAD, MSE, gradient and connectivity errors over the unknown region.
//!
//! Alpha mattes and masks are single-channel [`PixelGrid`]s; a mask pixel
//! counts when it is non-zero. Scaling follows the usual matting benchmark
//! convention: SAD, Grad and Conn are divided by 1000, MSE is multiplied by 1000.

use std::collections::VecDeque;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::synth::{Label, Trimap};

pub const METRIC_SCALE: f64 = 1000.0;
pub const GRAD_SIGMA: f64 = 1.4;
pub const CONN_STEP: f64 = 0.1;
pub const CONN_SOFT_THRESHOLD: f64 = 0.15;
pub const DEFAULT_PAD_TO: usize = 32;

/// Smallest side accepted by [`grad_error`].
pub const GRAD_MIN_SIZE: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize)]
pub struct EvalResult {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub unknown_pixel_count: usize,
    /// The mask was empty, so MSE fell back to 0.
    pub empty_mask: bool,
}

impl EvalResult {
    pub fn mean(results: &[EvalResult]) -> EvalResult {
        let n = results.len().max(1) as f64;
        let mut out = EvalResult::default();
        for r in results {
            out.sad += r.sad / n;
            out.mse += r.mse / n;
            out.grad += r.grad / n;
            out.conn += r.conn / n;
            out.unknown_pixel_count += r.unknown_pixel_count;
            out.empty_mask |= r.empty_mask;
        }
        out
    }
}

fn check_inputs(pred: &PixelGrid, gt: &PixelGrid, mask: &PixelGrid) -> Result<()> {
    for (name, g) in [("prediction", pred), ("ground truth", gt), ("mask", mask)] {
        if g.channels() != 1 {
            return Err(Error::invalid(format!("{name} must have one channel")));
        }
    }
    if !pred.same_size(gt) || !pred.same_size(mask) {
        return Err(Error::invalid(format!(
            "shape mismatch: prediction {}x{}, ground truth {}x{}, mask {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

fn masked(mask: &PixelGrid) -> impl Iterator<Item = usize> + '_ {
    mask.data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(i, _)| i)
}

pub fn sad(pred: &PixelGrid, gt: &PixelGrid, mask: &PixelGrid) -> Result<f64> {
    check_inputs(pred, gt, mask)?;
    let (p, g) = (pred.data(), gt.data());
    let sum: f64 = masked(mask).map(|i| (p[i] as f64 - g[i] as f64).abs()).sum();
    Ok(sum / METRIC_SCALE)
}

/// Returns the scaled MSE and whether the mask was empty.
pub fn mse(pred: &PixelGrid, gt: &PixelGrid, mask: &PixelGrid) -> Result<(f64, bool)> {
    check_inputs(pred, gt, mask)?;
    let (p, g) = (pred.data(), gt.data());
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in masked(mask) {
        let d = p[i] as f64 - g[i] as f64;
        sum += d * d;
        count += 1;
    }
    if count == 0 {
        return Ok((0.0, true));
    }
    Ok((sum / count as f64 * METRIC_SCALE, false))
}

fn gaussian(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

fn dgaussian(x: f64, sigma: f64) -> f64 {
    -x * gaussian(x, sigma) / (sigma * sigma)
}

/// Half width of the derivative filter: `ceil(3σ)`.
pub fn grad_half_size(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// The x-derivative kernel `k[i][j] = g(i)·g'(j)` scaled to unit L2 norm,
/// as separable factors `(along y, along x)`. The y kernel is its transpose.
pub fn gaussian_derivative_factors(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let half = grad_half_size(sigma) as isize;
    let g: Vec<f64> = (-half..=half).map(|i| gaussian(i as f64, sigma)).collect();
    let dg: Vec<f64> = (-half..=half).map(|i| dgaussian(i as f64, sigma)).collect();
    let norm = (g.iter().map(|v| v * v).sum::<f64>() * dg.iter().map(|v| v * v).sum::<f64>()).sqrt();
    (g, dg.into_iter().map(|v| v / norm).collect())
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Correlates with `col_taps` along y then `row_taps` along x, replicating borders.
fn separable_filter(src: &[f64], h: usize, w: usize, col_taps: &[f64], row_taps: &[f64]) -> Vec<f64> {
    let half = (col_taps.len() / 2) as isize;
    let mut vert = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            vert[y * w + x] = col_taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * src[clamp_index(y as isize + k as isize - half, h) * w + x])
                .sum();
        }
    }
    let half = (row_taps.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = row_taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * vert[y * w + clamp_index(x as isize + k as isize - half, w)])
                .sum();
        }
    }
    out
}

/// Per-pixel gradient magnitude under the Gaussian-derivative filters.
pub fn gradient_magnitude(image: &PixelGrid, sigma: f64) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let src: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let (g, dg) = gaussian_derivative_factors(sigma);
    let gx = separable_filter(&src, h, w, &g, &dg);
    let gy = separable_filter(&src, h, w, &dg, &g);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

pub fn grad_error(pred: &PixelGrid, gt: &PixelGrid, mask: &PixelGrid) -> Result<f64> {
    check_inputs(pred, gt, mask)?;
    if pred.height() < GRAD_MIN_SIZE || pred.width() < GRAD_MIN_SIZE {
        return Err(Error::invalid(format!(
            "gradient error needs at least {GRAD_MIN_SIZE}x{GRAD_MIN_SIZE} pixels, got {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    let gp = gradient_magnitude(pred, GRAD_SIGMA);
    let gg = gradient_magnitude(gt, GRAD_SIGMA);
    let sum: f64 = masked(mask).map(|i| (gp[i] - gg[i]).powi(2)).sum();
    Ok(sum / METRIC_SCALE)
}

/// Largest 4-connected component of `set`; ties go to the component whose
/// first pixel comes earliest in raster order.
pub fn largest_component(set: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; h * w];
    let mut best: Option<(usize, usize)> = None;
    let mut queue = VecDeque::new();
    let mut next = 0;
    for start in 0..h * w {
        if !set[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if set[j] && label[j] == usize::MAX {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
        next += 1;
    }
    match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; h * w],
    }
}

/// Connectivity error with thresholds `step, 2·step, …, 1`.
pub fn conn_error(pred: &PixelGrid, gt: &PixelGrid, mask: &PixelGrid, step: f64) -> Result<f64> {
    check_inputs(pred, gt, mask)?;
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::invalid(format!("connectivity step {step} is outside (0, 1)")));
    }
    let (h, w) = (pred.height(), pred.width());
    let (p, g) = (pred.data(), gt.data());
    let steps = (1.0 / step).round() as usize;
    let mut level = vec![f64::NAN; h * w];
    let mut previous = 0.0;
    for i in 1..=steps {
        let t = i as f64 * step;
        let both: Vec<bool> = p
            .iter()
            .zip(g)
            .map(|(&a, &b)| a as f64 >= t && b as f64 >= t)
            .collect();
        let omega = largest_component(&both, h, w);
        for (l, &inside) in level.iter_mut().zip(&omega) {
            if l.is_nan() && !inside {
                *l = previous;
            }
        }
        previous = t;
    }
    let phi = |x: f32, l: f64| {
        let d = x as f64 - l;
        if d >= CONN_SOFT_THRESHOLD {
            1.0 - d
        } else {
            1.0
        }
    };
    let sum: f64 = masked(mask)
        .map(|i| {
            let l = if level[i].is_nan() { 1.0 } else { level[i] };
            (phi(p[i], l) - phi(g[i], l)).abs()
        })
        .sum();
    Ok(sum / METRIC_SCALE)
}

/// Rounds `n` up to a multiple of `multiple`.
pub fn padded_len(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple.max(1)) * multiple.max(1)
}

fn all_metrics(pred: &PixelGrid, gt: &PixelGrid, mask: &PixelGrid) -> Result<EvalResult> {
    let (mse_value, empty_mask) = mse(pred, gt, mask)?;
    Ok(EvalResult {
        sad: sad(pred, gt, mask)?,
        mse: mse_value,
        grad: grad_error(pred, gt, mask)?,
        conn: conn_error(pred, gt, mask, CONN_STEP)?,
        unknown_pixel_count: masked(mask).count(),
        empty_mask,
    })
}

/// All four metrics with mask = unknown region of `trimap`.
///
/// Inputs go through the same edge-pad to a multiple of `pad_to` and crop
/// back that model inference uses, so metrics are always taken on the
/// original `H × W` region.
pub fn evaluate(pred: &PixelGrid, gt: &PixelGrid, trimap: &Trimap, pad_to: usize) -> Result<EvalResult> {
    let mask = trimap.mask(Label::Unknown);
    check_inputs(pred, gt, &mask)?;
    let (h, w) = (pred.height(), pred.width());
    let (ph, pw) = (padded_len(h, pad_to), padded_len(w, pad_to));
    if (ph, pw) == (h, w) {
        return all_metrics(pred, gt, &mask);
    }
    let pred = pred.pad_edge(ph, pw)?.crop(0, 0, h, w)?;
    let gt = gt.pad_edge(ph, pw)?.crop(0, 0, h, w)?;
    all_metrics(&pred, &gt, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> PixelGrid {
        PixelGrid::from_fn(h, w, 1, |y, x, _| f(y, x))
    }

    #[test]
    fn sad_and_mse_hand_values() {
        let gt = PixelGrid::zeros(40, 25, 1);
        let pred = PixelGrid::filled(40, 25, 1, 0.1);
        let mask = PixelGrid::filled(40, 25, 1, 1.0);
        assert!((sad(&pred, &gt, &mask).unwrap() - 0.1).abs() < 1e-6);
        let (m, empty) = mse(&pred, &gt, &mask).unwrap();
        assert!((m - 10.0).abs() < 1e-4 && !empty);
        let (m, empty) = mse(&pred, &gt, &PixelGrid::zeros(40, 25, 1)).unwrap();
        assert!(m == 0.0 && empty);
    }

    #[test]
    fn grad_kernel_is_unit_norm_11x11() {
        let (g, dg) = gaussian_derivative_factors(GRAD_SIGMA);
        assert_eq!(g.len(), 11);
        let norm: f64 = g.iter().flat_map(|a| dg.iter().map(move |b| (a * b).powi(2))).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grad_of_constants_is_zero() {
        let mask = PixelGrid::filled(9, 9, 1, 1.0);
        let e = grad_error(&PixelGrid::filled(9, 9, 1, 0.2), &PixelGrid::filled(9, 9, 1, 0.8), &mask).unwrap();
        assert!(e.abs() < 1e-12);
        let small = PixelGrid::zeros(6, 9, 1);
        assert!(grad_error(&small, &small, &PixelGrid::zeros(6, 9, 1)).is_err());
    }

    #[test]
    fn conn_of_opaque_is_zero() {
        let one = PixelGrid::filled(8, 8, 1, 1.0);
        assert_eq!(conn_error(&one, &one, &one, CONN_STEP).unwrap(), 0.0);
    }

    #[test]
    fn conn_hand_case() {
        // Block with one interior pixel at 0.5; that pixel leaves Ω at t = 0.6, so l = 0.5.
        let gt = grid(8, 8, |y, x| if (2..6).contains(&y) && (2..6).contains(&x) { 1.0 } else { 0.0 });
        let mut pred = gt.clone();
        pred.set(3, 3, 0, 0.5);
        let mask = PixelGrid::filled(8, 8, 1, 1.0);
        // pred: d = 0 → φ = 1. gt: d = 0.5 → φ = 0.5.
        let e = conn_error(&pred, &gt, &mask, CONN_STEP).unwrap();
        assert!((e - 0.5 / 1000.0).abs() < 1e-9, "{e}");
    }

    #[test]
    fn component_tie_breaks_by_scan_order() {
        let set = [true, false, true, true, false, false];
        assert_eq!(largest_component(&set, 2, 3), vec![true, false, false, true, false, false]);
        let set = [true, false, true];
        assert_eq!(largest_component(&set, 1, 3), vec![true, false, false]);
    }

    #[test]
    fn padding_sizes() {
        assert_eq!(padded_len(100, 32), 128);
        assert_eq!(padded_len(64, 32), 64);
    }
}
