//! Pretext sample generation: random trimaps, pseudo alpha mattes,
//! linear-fusion composites and augmentation, plus trimaps for labelled
//! fine-tuning data.

mod augment;
mod finetune;
mod trimap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::{rng_from_seed, Rng};

pub use augment::{apply_augment, augment, hsv_to_rgb, rgb_to_hsv, shift_hue, AugmentConfig, AugmentParams};
pub use finetune::{
    erode_disk, finetune_trimap_with_radii, make_finetune_trimap, make_finetune_trimap_with,
    FinetuneTrimapConfig,
};
pub use trimap::{
    generate_trimap_block, generate_trimap_grid, trimap_from_boxes, BoxRegion, Label, Trimap,
    TrimapRatios,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Grid cells labelled by exact quotas.
    #[default]
    Pixel,
    /// Nested rectangles.
    Block,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "block" => Ok(Self::Block),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?}; expected \"pixel\" or \"block\""
            ))),
        }
    }
}

/// Settings for [`make_pretrain_sample`]. Output size is `augment.crop_size`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub grid: usize,
    pub ratios: TrimapRatios,
    pub augment: AugmentConfig,
    pub strategy: Strategy,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            grid: 7,
            ratios: TrimapRatios::default(),
            augment: AugmentConfig::default(),
            strategy: Strategy::Pixel,
        }
    }
}

impl SampleConfig {
    pub fn size(&self) -> usize {
        self.augment.crop_size
    }

    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        self.augment.validate()?;
        if self.grid == 0 {
            return Err(Error::invalid("grid size must be positive"));
        }
        if self.strategy == Strategy::Pixel {
            trimap::check_divisible(self.size(), self.grid, "size")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSample {
    pub fused: PixelGrid,
    pub foreground: PixelGrid,
    pub background: PixelGrid,
    /// Single channel.
    pub alpha: PixelGrid,
    pub trimap: Trimap,
    pub seed: u64,
}

/// α = 1 on foreground, 0 on background, and an independent draw from
/// {0, 1, …, 255} / 255 on every unknown pixel.
pub fn generate_pseudo_alpha(trimap: &Trimap, rng: &mut Rng) -> PixelGrid {
    let data = trimap
        .labels()
        .iter()
        .map(|&l| match l {
            0 => 0.0,
            2 => 1.0,
            _ => rng.gen_range(0u32..=255) as f32 / 255.0,
        })
        .collect();
    PixelGrid::new(trimap.height(), trimap.width(), 1, data).expect("label count matches size")
}

/// `I = α·F + (1 − α)·B` per pixel and channel.
pub fn composite(foreground: &PixelGrid, background: &PixelGrid, alpha: &PixelGrid) -> Result<PixelGrid> {
    if foreground.channels() != 3 || background.channels() != 3 {
        return Err(Error::invalid("foreground and background must have 3 channels"));
    }
    if alpha.channels() != 1 {
        return Err(Error::invalid("alpha must have 1 channel"));
    }
    let (h, w) = (foreground.height(), foreground.width());
    for (name, g) in [("background", background), ("alpha", alpha)] {
        if g.height() != h || g.width() != w {
            return Err(Error::invalid(format!(
                "{name} is {}x{}, foreground is {h}x{w}",
                g.height(),
                g.width()
            )));
        }
    }
    let mut out = PixelGrid::zeros(h, w, 3);
    let (f, b, a) = (foreground.data(), background.data(), alpha.data());
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let ai = a[i / 3];
        *o = ai * f[i] + (1.0 - ai) * b[i];
    }
    Ok(out)
}

fn augment_and_crop(source: &PixelGrid, config: &AugmentConfig, rng: &mut Rng) -> Result<PixelGrid> {
    let size = config.crop_size;
    let warped = augment(source, config, rng);
    let top = rng.gen_range(0..=source.height() - size);
    let left = rng.gen_range(0..=source.width() - size);
    warped.crop(top, left, size, size)
}

/// Builds one pretext sample from a foreground and a background source.
/// The two sources are augmented independently.
pub fn make_pretrain_sample(
    fg_source: &PixelGrid,
    bg_source: &PixelGrid,
    config: &SampleConfig,
    seed: u64,
) -> Result<CompositeSample> {
    config.validate()?;
    let size = config.size();
    for (name, src) in [("foreground", fg_source), ("background", bg_source)] {
        if src.channels() != 3 {
            return Err(Error::invalid(format!("{name} source must have 3 channels")));
        }
        if src.height() < size || src.width() < size {
            return Err(Error::invalid(format!(
                "{name} source is {}x{}, smaller than the {size}x{size} crop",
                src.height(),
                src.width()
            )));
        }
    }
    let mut rng = rng_from_seed(seed);
    let foreground = augment_and_crop(fg_source, &config.augment, &mut rng)?;
    let background = augment_and_crop(bg_source, &config.augment, &mut rng)?;
    let trimap = match config.strategy {
        Strategy::Pixel => generate_trimap_grid(size, size, config.grid, config.ratios, &mut rng)?,
        Strategy::Block => generate_trimap_block(size, size, &mut rng)?,
    };
    let alpha = generate_pseudo_alpha(&trimap, &mut rng);
    let fused = composite(&foreground, &background, &alpha)?;
    Ok(CompositeSample {
        fused,
        foreground,
        background,
        alpha,
        trimap,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(seed: u64, n: usize) -> PixelGrid {
        let mut rng = rng_from_seed(seed);
        PixelGrid::from_fn(n, n, 3, |_, _, _| rng.gen::<f32>())
    }

    fn small_config() -> SampleConfig {
        SampleConfig {
            grid: 4,
            augment: AugmentConfig {
                crop_size: 32,
                ..AugmentConfig::default()
            },
            ..SampleConfig::default()
        }
    }

    #[test]
    fn composite_endpoints() {
        let f = PixelGrid::filled(3, 4, 3, 1.0);
        let b = PixelGrid::filled(3, 4, 3, 0.0);
        let out = composite(&f, &b, &PixelGrid::filled(3, 4, 1, 0.25)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.25));
        let f = source(1, 4);
        let b = source(2, 4);
        assert_eq!(composite(&f, &b, &PixelGrid::filled(4, 4, 1, 1.0)).unwrap(), f);
        assert_eq!(composite(&f, &b, &PixelGrid::filled(4, 4, 1, 0.0)).unwrap(), b);
        assert!(composite(&f, &source(3, 5), &PixelGrid::filled(4, 4, 1, 0.0)).is_err());
    }

    #[test]
    fn pseudo_alpha_respects_labels() {
        let t = Trimap::filled(10, 10, Label::Foreground);
        let a = generate_pseudo_alpha(&t, &mut rng_from_seed(0));
        assert!(a.data().iter().all(|&v| v == 1.0));
        let t = Trimap::filled(50, 50, Label::Unknown);
        let a = generate_pseudo_alpha(&t, &mut rng_from_seed(0));
        for &v in a.data() {
            let q = v * 255.0;
            assert!((q - q.round()).abs() < 1e-4 && (0.0..=255.0).contains(&q));
        }
    }

    #[test]
    fn sample_is_deterministic_and_consistent() {
        let (f, b) = (source(5, 40), source(6, 40));
        let cfg = small_config();
        let s1 = make_pretrain_sample(&f, &b, &cfg, 9).unwrap();
        let s2 = make_pretrain_sample(&f, &b, &cfg, 9).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(composite(&s1.foreground, &s1.background, &s1.alpha).unwrap(), s1.fused);
        assert_eq!(s1.fused.dims(), (32, 32, 3));
    }

    #[test]
    fn undersized_source_is_rejected() {
        let err = make_pretrain_sample(&source(1, 20), &source(2, 40), &small_config(), 0).unwrap_err();
        assert!(err.to_string().contains("foreground"));
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("block".parse::<Strategy>().unwrap(), Strategy::Block);
        assert!("grid".parse::<Strategy>().is_err());
    }
}
