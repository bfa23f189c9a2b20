use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::Rng;

/// Trimap label values. The numeric value is also the one-hot channel index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Unknown = 1,
    Foreground = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Background, Label::Unknown, Label::Foreground];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Background),
            1 => Some(Label::Unknown),
            2 => Some(Label::Foreground),
            _ => None,
        }
    }
}

/// Fractions of grid cells assigned to each label. They must sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimapRatios {
    pub unknown: f64,
    pub foreground: f64,
    pub background: f64,
}

/// Slack allowed when checking that the three ratios sum to one.
const RATIO_SUM_SLACK: f64 = 1e-9;

impl Default for TrimapRatios {
    fn default() -> Self {
        Self {
            unknown: 0.75,
            foreground: 0.125,
            background: 0.125,
        }
    }
}

impl TrimapRatios {
    pub fn new(unknown: f64, foreground: f64, background: f64) -> Result<Self> {
        let r = Self {
            unknown,
            foreground,
            background,
        };
        r.validate()?;
        Ok(r)
    }

    /// `θ` unknown with the rest split evenly between foreground and background.
    pub fn from_unknown(theta: f64) -> Result<Self> {
        let rest = (1.0 - theta) / 2.0;
        Self::new(theta, rest, rest)
    }

    /// Parses `"u,f,b"`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "ratios must be three comma-separated numbers u,f,b; got {text:?}"
            )));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| Error::Config(format!("bad ratio {p:?} in {text:?}")))?;
        }
        Self::new(v[0], v[1], v[2])
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.unknown, self.foreground, self.background];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid(format!(
                "trimap ratios must lie in [0, 1], got {all:?}"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > RATIO_SUM_SLACK {
            return Err(Error::invalid(format!(
                "trimap ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Exact cell quotas `(unknown, foreground, background)` for `cells` cells.
    pub fn quotas(&self, cells: usize) -> (usize, usize, usize) {
        let n = cells as f64;
        let nu = ((self.unknown * n).round() as usize).min(cells);
        let nf = ((self.foreground * n).round() as usize).min(cells - nu);
        (nu, nf, cells - nu - nf)
    }
}

/// A label map over {background, unknown, foreground}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trimap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    grid_size: Option<usize>,
}

impl Trimap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} trimap needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 2) {
            return Err(Error::invalid(format!("trimap label {bad} is not in {{0,1,2}}")));
        }
        Ok(Self {
            height,
            width,
            labels,
            grid_size: None,
        })
    }

    pub fn filled(height: usize, width: usize, label: Label) -> Self {
        Self {
            height,
            width,
            labels: vec![label as u8; height * width],
            grid_size: None,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Cell side length for grid-sampled trimaps.
    pub fn grid_size(&self) -> Option<usize> {
        self.grid_size
    }

    #[inline]
    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Pixel counts indexed by label value.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    pub fn count(&self, label: Label) -> usize {
        self.counts()[label as usize]
    }

    /// 1 where the pixel has `label`, 0 elsewhere.
    pub fn mask(&self, label: Label) -> PixelGrid {
        let l = label as u8;
        PixelGrid::new(
            self.height,
            self.width,
            1,
            self.labels.iter().map(|&v| if v == l { 1.0 } else { 0.0 }).collect(),
        )
        .expect("trimap dims are consistent")
    }

    pub fn unknown_mask(&self) -> PixelGrid {
        self.mask(Label::Unknown)
    }

    /// Channels ordered (background, unknown, foreground).
    pub fn one_hot(&self) -> PixelGrid {
        let mut data = vec![0.0; self.labels.len() * 3];
        for (i, &l) in self.labels.iter().enumerate() {
            data[i * 3 + l as usize] = 1.0;
        }
        PixelGrid::new(self.height, self.width, 3, data).expect("trimap dims are consistent")
    }

    /// Edge-replicating pad, used on the pad-to-multiple evaluation path.
    pub fn pad_edge(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width {
            return Err(Error::invalid("trimap pad target smaller than trimap"));
        }
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(self.label(y.min(self.height - 1), x.min(self.width - 1)));
            }
        }
        Ok(Self {
            height,
            width,
            labels,
            grid_size: self.grid_size,
        })
    }
}

pub(crate) fn check_divisible(dim: usize, grid: usize, what: &str) -> Result<()> {
    if dim % grid == 0 && dim > 0 {
        return Ok(());
    }
    let down = (dim / grid) * grid;
    let up = down + grid;
    let nearest = if down == 0 || dim - down > up - dim { up } else { down };
    Err(Error::invalid(format!(
        "{what} {dim} is not divisible by grid {grid}; nearest valid {what} is {nearest}"
    )))
}

/// Pixel-level (grid) sampling: exact per-label cell quotas placed by a seeded shuffle.
pub fn generate_trimap_grid(
    height: usize,
    width: usize,
    grid: usize,
    ratios: TrimapRatios,
    rng: &mut Rng,
) -> Result<Trimap> {
    if grid == 0 {
        return Err(Error::invalid("grid size must be positive"));
    }
    ratios.validate()?;
    check_divisible(height, grid, "height")?;
    check_divisible(width, grid, "width")?;
    let (rows, cols) = (height / grid, width / grid);
    let cells = rows * cols;
    let (nu, nf, nb) = ratios.quotas(cells);
    let mut cell_labels = Vec::with_capacity(cells);
    cell_labels.extend(std::iter::repeat_n(Label::Unknown as u8, nu));
    cell_labels.extend(std::iter::repeat_n(Label::Foreground as u8, nf));
    cell_labels.extend(std::iter::repeat_n(Label::Background as u8, nb));
    cell_labels.shuffle(rng);

    let mut labels = vec![0u8; height * width];
    for y in 0..height {
        let row = (y / grid) * cols;
        for x in 0..width {
            labels[y * width + x] = cell_labels[row + x / grid];
        }
    }
    Ok(Trimap {
        height,
        width,
        labels,
        grid_size: Some(grid),
    })
}

/// Axis-aligned pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BoxRegion {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Background outside `fusion`, foreground inside `foreground`, unknown in between.
pub fn trimap_from_boxes(
    height: usize,
    width: usize,
    fusion: BoxRegion,
    foreground: BoxRegion,
) -> Trimap {
    let mut labels = vec![Label::Background as u8; height * width];
    for y in 0..height {
        for x in 0..width {
            labels[y * width + x] = if foreground.contains(y, x) {
                Label::Foreground as u8
            } else if fusion.contains(y, x) {
                Label::Unknown as u8
            } else {
                Label::Background as u8
            };
        }
    }
    Trimap {
        height,
        width,
        labels,
        grid_size: None,
    }
}

/// Block-level sampling: a fusion box covering at least a quarter of the
/// image, with a foreground box strictly inside it covering at least a
/// tenth of the fusion box.
pub fn generate_trimap_block(height: usize, width: usize, rng: &mut Rng) -> Result<Trimap> {
    if height < 16 || width < 16 {
        return Err(Error::invalid(format!(
            "block trimaps need at least 16x16 pixels, got {height}x{width}"
        )));
    }
    let bh = rng.gen_range(height.div_ceil(2)..=height);
    let bw = rng.gen_range(width.div_ceil(2)..=width);
    let top = rng.gen_range(0..=height - bh);
    let left = rng.gen_range(0..=width - bw);
    let fusion = BoxRegion {
        top,
        left,
        height: bh,
        width: bw,
    };

    // 0.32² > 0.1, so the inner box always clears the area floor.
    let min_side = |s: usize| ((0.32 * s as f64).ceil() as usize).max(1);
    let fh = rng.gen_range(min_side(bh)..=bh - 2);
    let fw = rng.gen_range(min_side(bw)..=bw - 2);
    let ftop = rng.gen_range(top + 1..=top + bh - 1 - fh);
    let fleft = rng.gen_range(left + 1..=left + bw - 1 - fw);
    let foreground = BoxRegion {
        top: ftop,
        left: fleft,
        height: fh,
        width: fw,
    };
    Ok(trimap_from_boxes(height, width, fusion, foreground))
}
