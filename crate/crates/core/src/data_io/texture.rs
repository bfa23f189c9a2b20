//! Procedural RGB textures, the default stand-in for natural photos.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Gradient,
    ValueNoise,
    Checker,
    Blobs,
}

impl TextureKind {
    pub const ALL: [TextureKind; 4] = [
        TextureKind::Gradient,
        TextureKind::ValueNoise,
        TextureKind::Checker,
        TextureKind::Blobs,
    ];

    pub fn random(rng: &mut Rng) -> Self {
        Self::ALL[rng.gen_range(0..Self::ALL.len())]
    }
}

pub const MIN_TEXTURE_SIZE: usize = 8;

fn color(rng: &mut Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// A `size × size` texture; deterministic in `(kind, size, rng state)`.
pub fn procedural_texture(kind: TextureKind, size: usize, rng: &mut Rng) -> Result<PixelGrid> {
    if size < MIN_TEXTURE_SIZE {
        return Err(Error::invalid(format!(
            "texture size {size} is below the minimum {MIN_TEXTURE_SIZE}"
        )));
    }
    let img = match kind {
        TextureKind::Gradient => gradient(size, rng),
        TextureKind::ValueNoise => value_noise(size, rng),
        TextureKind::Checker => checker(size, rng),
        TextureKind::Blobs => blobs(size, rng),
    };
    Ok(img.clamp01())
}

/// Linear blend from the colour at (0, 0) to the colour at (H−1, W−1).
fn gradient(size: usize, rng: &mut Rng) -> PixelGrid {
    let (a, b) = (color(rng), color(rng));
    let span = (2 * (size - 1)) as f32;
    PixelGrid::from_fn(size, size, 3, |y, x, c| lerp(a, b, (y + x) as f32 / span)[c])
}

/// Three octaves of bilinear lattice noise per channel.
fn value_noise(size: usize, rng: &mut Rng) -> PixelGrid {
    let mut acc = vec![0.0f32; size * size * 3];
    let mut total = 0.0;
    for octave in 0..3 {
        let cells = 4usize << octave;
        let amp = 0.5f32.powi(octave as i32);
        total += amp;
        let lattice: Vec<f32> = (0..(cells + 1) * (cells + 1) * 3).map(|_| rng.gen()).collect();
        let at = |i: usize, j: usize, c: usize| lattice[(i * (cells + 1) + j) * 3 + c];
        for y in 0..size {
            let fy = y as f32 * cells as f32 / size as f32;
            let (i, ty) = (fy as usize, fy.fract());
            for x in 0..size {
                let fx = x as f32 * cells as f32 / size as f32;
                let (j, tx) = (fx as usize, fx.fract());
                for c in 0..3 {
                    let top = at(i, j, c) * (1.0 - tx) + at(i, j + 1, c) * tx;
                    let bottom = at(i + 1, j, c) * (1.0 - tx) + at(i + 1, j + 1, c) * tx;
                    acc[(y * size + x) * 3 + c] += amp * (top * (1.0 - ty) + bottom * ty);
                }
            }
        }
    }
    PixelGrid::new(size, size, 3, acc.into_iter().map(|v| v / total).collect())
        .expect("sizes match")
}

fn checker(size: usize, rng: &mut Rng) -> PixelGrid {
    let (a, b) = (color(rng), color(rng));
    let cell = rng.gen_range(2..=(size / 4).max(2));
    let (oy, ox) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
    PixelGrid::from_fn(size, size, 3, |y, x, c| {
        if ((y + oy) / cell + (x + ox) / cell) % 2 == 0 {
            a[c]
        } else {
            b[c]
        }
    })
}

/// Gaussian blobs of random colour over a flat background.
fn blobs(size: usize, rng: &mut Rng) -> PixelGrid {
    let base = color(rng);
    let count = rng.gen_range(3..=8);
    let s = size as f32;
    let spots: Vec<(f32, f32, f32, [f32; 3])> = (0..count)
        .map(|_| {
            let cy = rng.gen_range(0.0..s);
            let cx = rng.gen_range(0.0..s);
            let r = rng.gen_range(0.05 * s..0.25 * s);
            (cy, cx, r, color(rng))
        })
        .collect();
    let mut img = PixelGrid::from_fn(size, size, 3, |_, _, c| base[c]);
    for &(cy, cx, r, col) in &spots {
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                let w = (-d2 / (2.0 * r * r)).exp();
                for (c, &target) in col.iter().enumerate() {
                    let v = img.get(y, x, c);
                    img.set(y, x, c, v + (target - v) * w);
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn gradient_endpoints() {
        let mut rng = rng_from_seed(3);
        let img = procedural_texture(TextureKind::Gradient, 16, &mut rng).unwrap();
        let mut rng = rng_from_seed(3);
        let (a, b) = (color(&mut rng), color(&mut rng));
        assert_eq!(img.pixel(0, 0), &a);
        for c in 0..3 {
            assert!((img.get(15, 15, c) - b[c]).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        for kind in TextureKind::ALL {
            let a = procedural_texture(kind, 24, &mut rng_from_seed(5)).unwrap();
            let b = procedural_texture(kind, 24, &mut rng_from_seed(5)).unwrap();
            assert_eq!(a, b);
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(procedural_texture(TextureKind::Blobs, 7, &mut rng_from_seed(0)).is_err());
    }
}
