//! Random affine warp, horizontal flip and hue rotation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::Rng;

/// Sampling ranges for [`augment`]. Ranges are inclusive `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotation_deg: [f64; 2],
    pub scale: [f64; 2],
    pub shear_deg: [f64; 2],
    pub flip_prob: f64,
    /// Fraction of the hue circle.
    pub hue_shift: [f64; 2],
    pub crop_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_deg: [-30.0, 30.0],
            scale: [0.8, 1.25],
            shear_deg: [-10.0, 10.0],
            flip_prob: 0.5,
            hue_shift: [-0.1, 0.1],
            crop_size: 224,
        }
    }
}

impl AugmentConfig {
    /// No geometric or colour change.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            rotation_deg: [0.0, 0.0],
            scale: [1.0, 1.0],
            shear_deg: [0.0, 0.0],
            flip_prob: 0.0,
            hue_shift: [0.0, 0.0],
            crop_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("rotation", self.rotation_deg),
            ("scale", self.scale),
            ("shear", self.shear_deg),
            ("hue shift", self.hue_shift),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::invalid(format!("{name} range {r:?} is not ordered")));
            }
        }
        if self.scale[0] <= 0.0 {
            return Err(Error::invalid("scale range must be positive"));
        }
        if self.shear_deg[0] <= -90.0 || self.shear_deg[1] >= 90.0 {
            return Err(Error::invalid("shear must stay within (-90, 90) degrees"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid(format!(
                "flip probability {} is outside [0, 1]",
                self.flip_prob
            )));
        }
        if self.crop_size == 0 {
            return Err(Error::invalid("crop size must be positive"));
        }
        Ok(())
    }
}

/// One draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shear_deg: f64,
    pub flip: bool,
    pub hue_shift: f64,
}

impl AugmentParams {
    pub fn sample(config: &AugmentConfig, rng: &mut Rng) -> Self {
        let draw = |rng: &mut Rng, r: [f64; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.gen_range(r[0]..=r[1])
            }
        };
        let rotation_deg = draw(rng, config.rotation_deg);
        let scale = draw(rng, config.scale);
        let shear_deg = draw(rng, config.shear_deg);
        let flip = rng.gen::<f64>() < config.flip_prob;
        let hue_shift = draw(rng, config.hue_shift);
        Self {
            rotation_deg,
            scale,
            shear_deg,
            flip,
            hue_shift,
        }
    }

    /// Inverse of `rotation · shear · scale`, mapping output offsets to source offsets.
    fn inverse_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let z = self.scale;
        // [c -s; s c] · [1 k; 0 1] · [z 0; 0 z]
        let a = [[c * z, (c * k - s) * z], [s * z, (s * k + c) * z]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ]
    }
}

/// Applies one sampled affine warp (bilinear, edge clamp), optional
/// horizontal flip and a hue rotation. Output has the input's shape and is
/// clipped to `[0, 1]`.
pub fn augment(image: &PixelGrid, config: &AugmentConfig, rng: &mut Rng) -> PixelGrid {
    let params = AugmentParams::sample(config, rng);
    apply_augment(image, &params)
}

pub fn apply_augment(image: &PixelGrid, params: &AugmentParams) -> PixelGrid {
    let warped = warp(image, params);
    let shifted = if params.hue_shift != 0.0 && image.channels() == 3 {
        shift_hue(&warped, params.hue_shift)
    } else {
        warped
    };
    shifted.clamp01()
}

fn warp(image: &PixelGrid, params: &AugmentParams) -> PixelGrid {
    let (h, w, ch) = image.dims();
    let inv = params.inverse_matrix();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = PixelGrid::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            let xo = if params.flip { w - 1 - x } else { x };
            let (dy, dx) = (y as f64 - cy, xo as f64 - cx);
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            for c in 0..ch {
                out.set(y, x, c, bilinear(image, sy, sx, c));
            }
        }
    }
    out
}

fn bilinear(image: &PixelGrid, sy: f64, sx: f64, c: usize) -> f32 {
    let (h, w) = (image.height() as isize, image.width() as isize);
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = sy - y0;
    let fx = sx - x0;
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let p = |yy: isize, xx: isize| image.get(clamp(yy, h), clamp(xx, w), c) as f64;
    let top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x0 + 1);
    let bottom = (1.0 - fx) * p(y0 + 1, x0) + fx * p(y0 + 1, x0 + 1);
    ((1.0 - fy) * top + fy * bottom) as f32
}

/// RGB → HSV with all components in `[0, 1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotates hue by `shift` turns.
pub fn shift_hue(image: &PixelGrid, shift: f64) -> PixelGrid {
    let (h, w, ch) = image.dims();
    debug_assert_eq!(ch, 3);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let p = image.pixel(y, x);
            let (hh, s, v) = rgb_to_hsv(p[0] as f64, p[1] as f64, p[2] as f64);
            let (r, g, b) = hsv_to_rgb((hh + shift).rem_euclid(1.0), s, v);
            out.set(y, x, 0, r as f32);
            out.set(y, x, 1, g as f32);
            out.set(y, x, 2, b as f32);
        }
    }
    out
}
