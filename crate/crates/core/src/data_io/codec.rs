//! PNG and binary PPM/PGM encode/decode for 8-bit gray and RGB images.

use std::cell::Cell;
use std::fs;
use std::io::{self, BufRead, Read, Seek, SeekFrom};
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::synth::Trimap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    /// Binary PPM (P6) for RGB, PGM (P5) for gray.
    Pnm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "png" => Ok(Self::Png),
            "ppm" | "pgm" | "pnm" => Ok(Self::Pnm),
            _ => Err(Error::Unsupported(format!(
                "{}: expected .png, .ppm or .pgm",
                path.display()
            ))),
        }
    }
}

pub const SUPPORTED_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: PixelGrid,
    pub source: String,
    pub bit_depth: u8,
}

pub fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_image(path: &Path) -> Result<ImageRecord> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (pixels, bit_depth) = decode_bytes(&bytes, ImageFormat::from_path(path)?)?;
    Ok(ImageRecord {
        pixels,
        source: path.display().to_string(),
        bit_depth,
    })
}

/// Returns the image and the bit depth of the source data.
pub fn decode_bytes(bytes: &[u8], format: ImageFormat) -> Result<(PixelGrid, u8)> {
    match format {
        ImageFormat::Png => decode_png(bytes),
        ImageFormat::Pnm => decode_pnm(bytes),
    }
}

pub fn encode_image(image: &PixelGrid, path: &Path) -> Result<()> {
    let bytes = encode_bytes(image, ImageFormat::from_path(path)?)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_bytes(image: &PixelGrid, format: ImageFormat) -> Result<Vec<u8>> {
    let (h, w, c) = image.dims();
    if c != 1 && c != 3 {
        return Err(Error::Unsupported(format!("{c}-channel images")));
    }
    let raw: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    match format {
        ImageFormat::Png => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
                enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
                enc.set_depth(png::BitDepth::Eight);
                let mut writer = enc
                    .write_header()
                    .map_err(|e| Error::Unsupported(format!("png encode: {e}")))?;
                writer
                    .write_image_data(&raw)
                    .map_err(|e| Error::Unsupported(format!("png encode: {e}")))?;
            }
            Ok(out)
        }
        ImageFormat::Pnm => {
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&raw);
            Ok(out)
        }
    }
}

/// In-memory reader that publishes its position so errors can name a byte offset.
struct Tracked<'a> {
    data: &'a [u8],
    pos: Rc<Cell<u64>>,
}

impl Read for Tracked<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let avail = self.fill_buf()?;
        let n = avail.len().min(buf.len());
        buf[..n].copy_from_slice(&avail[..n]);
        self.consume(n);
        Ok(n)
    }
}

impl BufRead for Tracked<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        let p = (self.pos.get() as usize).min(self.data.len());
        Ok(&self.data[p..])
    }

    fn consume(&mut self, amt: usize) {
        self.pos.set(self.pos.get() + amt as u64);
    }
}

impl Seek for Tracked<'_> {
    fn seek(&mut self, to: SeekFrom) -> io::Result<u64> {
        let len = self.data.len() as i64;
        let target = match to {
            SeekFrom::Start(p) => p as i64,
            SeekFrom::End(d) => len + d,
            SeekFrom::Current(d) => self.pos.get() as i64 + d,
        };
        if target < 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "seek before start"));
        }
        self.pos.set(target as u64);
        Ok(target as u64)
    }
}

fn decode_png(bytes: &[u8]) -> Result<(PixelGrid, u8)> {
    let pos = Rc::new(Cell::new(0u64));
    let fail = |e: png::DecodingError, pos: &Rc<Cell<u64>>| Error::Decode {
        offset: pos.get().min(bytes.len() as u64),
        message: format!("png: {e}"),
    };
    let mut decoder = png::Decoder::new(Tracked {
        data: bytes,
        pos: pos.clone(),
    });
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| fail(e, &pos))?;
    let source_depth = reader.info().bit_depth as u8;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        offset: pos.get(),
        message: "png: image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| fail(e, &pos))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let out_channels = if src_channels >= 3 { 3 } else { 1 };
    let mut data = Vec::with_capacity(w * h * out_channels);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * src_channels];
        for px in row.chunks_exact(src_channels) {
            data.extend(px[..out_channels].iter().map(|&b| b as f32 / 255.0));
        }
    }
    Ok((PixelGrid::new(h, w, out_channels, data)?, source_depth))
}

struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmHeader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("pnm: expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Decode {
                offset: start as u64,
                message: format!("pnm: {what} out of range"),
            })
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<(PixelGrid, u8)> {
    let mut hdr = PnmHeader { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(hdr.err("pnm: expected binary P5 or P6 magic")),
    };
    hdr.pos = 2;
    let w = hdr.number("width")?;
    let h = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(hdr.err(format!("pnm: maxval {maxval} outside 1..=65535")));
    }
    if hdr.pos >= bytes.len() || !bytes[hdr.pos].is_ascii_whitespace() {
        return Err(hdr.err("pnm: expected whitespace after maxval"));
    }
    hdr.pos += 1;
    let wide = maxval > 255;
    let sample_bytes = if wide { 2 } else { 1 };
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels * sample_bytes))
        .ok_or_else(|| hdr.err("pnm: dimensions overflow"))?;
    let body = &bytes[hdr.pos..];
    if body.len() < need {
        return Err(Error::Decode {
            offset: bytes.len() as u64,
            message: format!("pnm: truncated pixel data, need {need} bytes, have {}", body.len()),
        });
    }
    let scale = maxval as f32;
    let data = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / scale).min(1.0))
            .collect()
    } else {
        body[..need].iter().map(|&b| (b as f32 / scale).min(1.0)).collect()
    };
    Ok((PixelGrid::new(h, w, channels, data)?, if wide { 16 } else { 8 }))
}

/// Gray level used for each trimap label on disk.
pub fn trimap_gray(label: u8) -> u8 {
    match label {
        0 => 0,
        1 => 128,
        _ => 255,
    }
}

/// Nearest of 0 / 128 / 255 back to a label.
pub fn gray_to_label(v: u8) -> u8 {
    match v {
        0..=63 => 0,
        64..=191 => 1,
        _ => 2,
    }
}

pub fn trimap_to_grid(trimap: &Trimap) -> PixelGrid {
    let data = trimap
        .labels()
        .iter()
        .map(|&l| trimap_gray(l) as f32 / 255.0)
        .collect();
    PixelGrid::new(trimap.height(), trimap.width(), 1, data).expect("trimap dims are consistent")
}

pub fn grid_to_trimap(grid: &PixelGrid) -> Result<Trimap> {
    if grid.channels() != 1 {
        return Err(Error::invalid("trimap image must be single-channel"));
    }
    let labels = grid.data().iter().map(|&v| gray_to_label(quantize(v))).collect();
    Trimap::new(grid.height(), grid.width(), labels)
}

pub fn encode_trimap(trimap: &Trimap, path: &Path) -> Result<()> {
    encode_image(&trimap_to_grid(trimap), path)
}

pub fn decode_trimap(path: &Path) -> Result<Trimap> {
    grid_to_trimap(&decode_image(path)?.pixels)
}
