//! Trimaps for labelled data: threshold the ground-truth alpha into certain
//! foreground / background and erode both by random radii, leaving an
//! unknown band around the boundary.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::trimap::{Label, Trimap};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneTrimapConfig {
    /// Alpha at or above this is certain foreground before erosion.
    pub fg_threshold: f32,
    /// Alpha at or below this is certain background before erosion.
    pub bg_threshold: f32,
    /// Inclusive erosion radius range in pixels.
    pub radius_range: [usize; 2],
}

impl Default for FinetuneTrimapConfig {
    fn default() -> Self {
        Self {
            fg_threshold: 0.999,
            bg_threshold: 0.001,
            radius_range: [1, 15],
        }
    }
}

pub fn make_finetune_trimap(gt_alpha: &PixelGrid, rng: &mut Rng) -> Result<Trimap> {
    make_finetune_trimap_with(gt_alpha, &FinetuneTrimapConfig::default(), rng)
}

pub fn make_finetune_trimap_with(
    gt_alpha: &PixelGrid,
    config: &FinetuneTrimapConfig,
    rng: &mut Rng,
) -> Result<Trimap> {
    let [lo, hi] = config.radius_range;
    if lo > hi {
        return Err(Error::invalid(format!("radius range [{lo}, {hi}] is not ordered")));
    }
    let fg_radius = rng.gen_range(lo..=hi);
    let bg_radius = rng.gen_range(lo..=hi);
    finetune_trimap_with_radii(gt_alpha, config, fg_radius, bg_radius)
}

pub fn finetune_trimap_with_radii(
    gt_alpha: &PixelGrid,
    config: &FinetuneTrimapConfig,
    fg_radius: usize,
    bg_radius: usize,
) -> Result<Trimap> {
    if gt_alpha.channels() != 1 {
        return Err(Error::invalid("ground-truth alpha must have one channel"));
    }
    let (h, w) = (gt_alpha.height(), gt_alpha.width());
    let fg: Vec<bool> = gt_alpha.data().iter().map(|&a| a >= config.fg_threshold).collect();
    let bg: Vec<bool> = gt_alpha.data().iter().map(|&a| a <= config.bg_threshold).collect();
    let fg = erode_disk(&fg, h, w, fg_radius);
    let bg = erode_disk(&bg, h, w, bg_radius);
    let labels = fg
        .iter()
        .zip(&bg)
        .map(|(&f, &b)| {
            if f {
                Label::Foreground as u8
            } else if b {
                Label::Background as u8
            } else {
                Label::Unknown as u8
            }
        })
        .collect();
    Trimap::new(h, w, labels)
}

/// Binary erosion by a Euclidean disk of `radius`; pixels outside the image count as set.
///
/// A set pixel survives iff no unset pixel lies within `radius`. The nearest
/// unset pixel always has a set 4-neighbour, so only that frontier is scanned.
pub fn erode_disk(set: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return set.to_vec();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let mut out = set.to_vec();
    let at = |y: isize, x: isize| -> bool {
        y < 0 || x < 0 || y >= h as isize || x >= w as isize || set[y as usize * w + x as usize]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            if at(y, x) {
                continue;
            }
            let frontier = at(y - 1, x) || at(y + 1, x) || at(y, x - 1) || at(y, x + 1);
            if !frontier {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                    out[yy as usize * w + xx as usize] = false;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn brute_erode(set: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
        let r = r as isize;
        let mut out = vec![false; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut keep = true;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dy * dy + dx * dx > r * r {
                            continue;
                        }
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize
                            && !set[yy as usize * w + xx as usize]
                        {
                            keep = false;
                        }
                    }
                }
                out[y as usize * w + x as usize] = keep;
            }
        }
        out
    }

    #[test]
    fn frontier_erosion_matches_brute_force() {
        let mut rng = rng_from_seed(4);
        for r in [1, 2, 5, 9] {
            let set: Vec<bool> = (0..20 * 17).map(|_| rng.gen::<f32>() < 0.7).collect();
            assert_eq!(erode_disk(&set, 20, 17, r), brute_erode(&set, 20, 17, r));
        }
    }

    #[test]
    fn opaque_alpha_has_no_background() {
        let a = PixelGrid::filled(20, 20, 1, 1.0);
        let t = make_finetune_trimap(&a, &mut rng_from_seed(0)).unwrap();
        assert_eq!(t.count(Label::Background), 0);
        assert_eq!(t.count(Label::Foreground) + t.count(Label::Unknown), 400);
    }

    #[test]
    fn fractional_alpha_is_always_unknown() {
        let a = PixelGrid::from_fn(24, 24, 1, |y, x, _| ((y * 24 + x) % 7) as f32 / 6.0);
        let t = make_finetune_trimap(&a, &mut rng_from_seed(8)).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let v = a.get(y, x, 0);
                if v > 0.001 && v < 0.999 {
                    assert_eq!(t.label(y, x), Label::Unknown as u8);
                }
            }
        }
    }

    #[test]
    fn radii_are_drawn_from_range() {
        let a = PixelGrid::from_fn(64, 64, 1, |y, _, _| if y < 32 { 1.0 } else { 0.0 });
        for seed in 0..20 {
            let t = make_finetune_trimap(&a, &mut rng_from_seed(seed)).unwrap();
            let band = t.count(Label::Unknown) / 64;
            assert!((2..=30).contains(&band), "band {band}");
        }
    }
}
