//! Directory scanning, on-disk matting sets and pretext image sources.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use walkdir::WalkDir;

use super::codec::{decode_image, SUPPORTED_EXTENSIONS};
use super::texture::{procedural_texture, TextureKind};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::seed::Rng;

/// Supported images under `root`, recursively, sorted by path.
pub fn scan_image_dir(root: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", root.display())));
    }
    let mut paths = Vec::new();
    for entry in WalkDir::new(root).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let supported = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| SUPPORTED_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if supported {
            paths.push(entry.into_path());
        }
    }
    paths.sort();
    Ok(paths)
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(scan_image_dir(dir)?
        .into_iter()
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?.to_string();
            Some((stem, p))
        })
        .collect())
}

/// One labelled item read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct MattingRecord {
    pub name: String,
    pub fg: PixelGrid,
    pub alpha: PixelGrid,
}

/// Reads `root/fg/*` and `root/alpha/*`, paired by file stem.
pub fn load_matting_dir(root: &Path) -> Result<Vec<MattingRecord>> {
    let fgs = by_stem(&root.join("fg"))?;
    let alphas = by_stem(&root.join("alpha"))?;
    let mut out = Vec::with_capacity(fgs.len());
    for (name, fg_path) in &fgs {
        let Some(alpha_path) = alphas.get(name) else {
            return Err(Error::invalid(format!("{}: no matching alpha", fg_path.display())));
        };
        let fg = decode_image(fg_path)?.pixels;
        let alpha = decode_image(alpha_path)?.pixels;
        if fg.channels() != 3 || alpha.channels() != 1 || fg.height() != alpha.height() || fg.width() != alpha.width() {
            return Err(Error::invalid(format!(
                "{name}: expected RGB foreground and gray alpha of equal size"
            )));
        }
        out.push(MattingRecord {
            name: name.clone(),
            fg,
            alpha,
        });
    }
    if let Some(extra) = alphas.keys().find(|k| !fgs.contains_key(*k)) {
        return Err(Error::invalid(format!("alpha {extra} has no matching foreground")));
    }
    Ok(out)
}

/// Where pretext foreground/background images come from.
#[derive(Clone, Debug)]
pub enum ImageSource {
    /// Random procedural textures of the given side length.
    Procedural { size: usize },
    /// Decoded RGB images, drawn uniformly.
    Images(Vec<PixelGrid>),
}

impl ImageSource {
    /// Loads every supported image under `root` (gray images are expanded to RGB).
    pub fn from_dir(root: &Path) -> Result<Self> {
        let paths = scan_image_dir(root)?;
        if paths.is_empty() {
            return Err(Error::invalid(format!("no images under {}", root.display())));
        }
        let images = paths
            .iter()
            .map(|p| {
                let img = decode_image(p)?.pixels;
                Ok(if img.channels() == 1 {
                    PixelGrid::from_fn(img.height(), img.width(), 3, |y, x, _| img.get(y, x, 0))
                } else {
                    img
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Images(images))
    }

    pub fn draw(&self, rng: &mut Rng) -> Result<PixelGrid> {
        match self {
            ImageSource::Procedural { size } => {
                let kind = TextureKind::random(rng);
                procedural_texture(kind, *size, rng)
            }
            ImageSource::Images(images) => Ok(images[rng.gen_range(0..images.len())].clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::codec::encode_image;

    #[test]
    fn scan_filters_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let img = PixelGrid::zeros(2, 2, 3);
        encode_image(&img, &dir.path().join("b/z.png")).unwrap();
        encode_image(&img, &dir.path().join("a.ppm")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let found = scan_image_dir(dir.path()).unwrap();
        let names: Vec<_> = found
            .iter()
            .map(|p| p.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["a.ppm", "b/z.png"]);
        assert_eq!(found, scan_image_dir(dir.path()).unwrap());
        let empty = tempfile::tempdir().unwrap();
        assert!(scan_image_dir(empty.path()).unwrap().is_empty());
        assert!(scan_image_dir(&dir.path().join("missing")).is_err());
    }
}
