//! A labelled toy matting set: textured shapes with analytic soft-edged alphas.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::texture::{procedural_texture, TextureKind};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::{mix_seed, rng_from_seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Ellipse,
    /// A rounded strip: all points within `radii.0` of a segment of half-length `radii.1`.
    Capsule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeDescriptor {
    pub kind: ShapeKind,
    /// (y, x) in pixel coordinates.
    pub center: (f64, f64),
    /// Disk: (r, r). Ellipse: semi-axes (a, b). Capsule: (radius, half-length).
    pub radii: (f64, f64),
    /// Rotation in radians (ellipse and capsule).
    pub angle: f64,
    /// Width of the fractional band in pixels.
    pub softness: f64,
}

impl ShapeDescriptor {
    /// Approximate signed distance to the boundary, negative inside.
    pub fn signed_distance(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.center.0, x - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        match self.kind {
            ShapeKind::Disk => (dy * dy + dx * dx).sqrt() - self.radii.0,
            ShapeKind::Ellipse => {
                let (a, b) = self.radii;
                let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                if rho == 0.0 {
                    return -a.min(b);
                }
                // Distance from the boundary point on the ray through (u, v).
                let len = (u * u + v * v).sqrt();
                len - len / rho
            }
            ShapeKind::Capsule => {
                let (r, half) = self.radii;
                let t = u.clamp(-half, half);
                ((u - t).powi(2) + v * v).sqrt() - r
            }
        }
    }

    /// `clamp(−sd / softness + 0.5, 0, 1)`; for a disk this is `(r − dist) / softness + 0.5`.
    pub fn alpha_at(&self, y: f64, x: f64) -> f64 {
        (-self.signed_distance(y, x) / self.softness + 0.5).clamp(0.0, 1.0)
    }

    pub fn render(&self, size: usize) -> PixelGrid {
        PixelGrid::from_fn(size, size, 1, |y, x, _| self.alpha_at(y as f64, x as f64) as f32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyMattingItem {
    pub fg: PixelGrid,
    pub alpha: PixelGrid,
    pub shape: ShapeDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub items: Vec<ToyMattingItem>,
    pub size: usize,
}

impl ToyDataset {
    /// Index where the test split starts: the first 80% is training data.
    pub fn split_index(&self) -> usize {
        self.items.len() * 4 / 5
    }

    pub fn train(&self) -> &[ToyMattingItem] {
        &self.items[..self.split_index()]
    }

    pub fn test(&self) -> &[ToyMattingItem] {
        &self.items[self.split_index()..]
    }

    /// SHA-256 over every stored value, in item order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for item in &self.items {
            for g in [&item.fg, &item.alpha] {
                for v in g.data() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn random_shape(size: usize, rng: &mut crate::seed::Rng) -> ShapeDescriptor {
    let s = size as f64;
    let kind = [ShapeKind::Disk, ShapeKind::Ellipse, ShapeKind::Capsule][rng.gen_range(0..3)];
    let softness = rng.gen_range(1.0..=4.0);
    let center = (rng.gen_range(0.35 * s..0.65 * s), rng.gen_range(0.35 * s..0.65 * s));
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let radii = match kind {
        ShapeKind::Disk => {
            let r = rng.gen_range(0.18 * s..0.3 * s);
            (r, r)
        }
        ShapeKind::Ellipse => (rng.gen_range(0.2 * s..0.32 * s), rng.gen_range(0.1 * s..0.2 * s)),
        ShapeKind::Capsule => (rng.gen_range(0.08 * s..0.15 * s), rng.gen_range(0.12 * s..0.25 * s)),
    };
    ShapeDescriptor {
        kind,
        center,
        radii,
        angle,
        softness,
    }
}

/// `n` items of `size × size`; item `i` depends only on `(seed, i, size)`.
pub fn toy_matting_dataset(n: usize, size: usize, seed: u64) -> Result<ToyDataset> {
    if n == 0 {
        return Err(Error::invalid("toy dataset needs at least one item"));
    }
    let items = (0..n)
        .map(|i| {
            let mut rng = rng_from_seed(mix_seed(seed, i as u64));
            let shape = random_shape(size, &mut rng);
            let fg = procedural_texture(TextureKind::random(&mut rng), size, &mut rng)?;
            Ok(ToyMattingItem {
                fg,
                alpha: shape.render(size),
                shape,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyDataset { items, size })
}
