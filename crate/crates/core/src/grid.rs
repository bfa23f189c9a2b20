//! Dense `H × W × C` pixel storage shared by images, alpha mattes and masks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interleaved (`HWC`) 32-bit pixel grid. Images use 3 channels; alphas and masks use 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height * width * channels != data.len() {
            return Err(Error::invalid(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_size(&self, other: &PixelGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
    }

    /// Top-left-anchored window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, self.channels, |y, x, c| {
            self.get(top + y, left + x, c)
        }))
    }

    /// Grows to `height × width` by replicating the last row and column.
    pub fn pad_edge(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width || self.height == 0 || self.width == 0 {
            return Err(Error::invalid(format!(
                "cannot edge-pad {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(height, width, self.channels, |y, x, c| {
            self.get(y.min(self.height - 1), x.min(self.width - 1), c)
        }))
    }

    pub fn mirror_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, self.channels, |y, x, c| {
            self.get(y, self.width - 1 - x, c)
        })
    }

    /// Single channel `c` as a 1-channel grid.
    pub fn channel(&self, c: usize) -> Self {
        Self::from_fn(self.height, self.width, 1, |y, x, _| self.get(y, x, c))
    }

    /// `[1, C, H, W]` planar tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (h, w, ch) = self.dims();
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..ch {
            for i in 0..h * w {
                data.push(T::from_f64(self.data[i * ch + c] as f64));
            }
        }
        Tensor::new(vec![1, ch, h, w], data).expect("grid dims are consistent")
    }

    /// Inverse of [`PixelGrid::to_tensor`] for batch element `index`.
    pub fn from_tensor<T: Scalar>(tensor: &Tensor<T>, index: usize) -> Result<Self> {
        let [n, ch, h, w] = tensor.dims4()?;
        if index >= n {
            return Err(Error::invalid(format!("batch index {index} out of range {n}")));
        }
        let src = &tensor.data()[index * ch * h * w..(index + 1) * ch * h * w];
        Ok(Self::from_fn(h, w, ch, |y, x, c| {
            src[c * h * w + y * w + x].as_f64() as f32
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let g = PixelGrid::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let t = g.to_tensor::<f32>();
        assert_eq!(t.shape(), &[1, 3, 3, 4]);
        assert_eq!(t.data()[12], 1.0); // channel 1, pixel (0,0)
        assert_eq!(PixelGrid::from_tensor(&t, 0).unwrap(), g);
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let g = PixelGrid::from_fn(5, 3, 1, |y, x, _| (y * 3 + x) as f32);
        let p = g.pad_edge(8, 8).unwrap();
        assert_eq!(p.get(7, 7, 0), g.get(4, 2, 0));
        assert_eq!(p.crop(0, 0, 5, 3).unwrap(), g);
    }
}
