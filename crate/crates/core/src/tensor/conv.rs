//! im2col convolution kernels shared by the tape's forward and backward passes.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels_in: usize,
    pub channels_out: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels_in * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// A 1×1 stride-1 unpadded convolution reads its input directly as the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `ox` whose input column `ox·stride + kx − padding` lies inside `[0, width)`.
fn valid_range(kx: usize, g: &ConvGeometry, out_len: usize, in_len: usize) -> (usize, usize) {
    let lo = if g.padding > kx {
        (g.padding - kx + g.stride - 1) / g.stride
    } else {
        0
    };
    let hi = if in_len + g.padding > kx {
        ((in_len + g.padding - kx + g.stride - 1) / g.stride).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one image `[Cin, H, W]` into `[Cin·k·k, H'·W']`.
pub(crate) fn im2col<T: Scalar>(image: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut col = vec![T::zero(); g.col_rows() * oh * ow];
    let mut row = 0;
    for c in 0..g.channels_in {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(ky, g, oh, g.height);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(kx, g, ow, g.width);
                if ox_lo == ox_hi {
                    row += 1;
                    continue;
                }
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    let src_row = &plane[iy * g.width..(iy + 1) * g.width];
                    let d = &mut dst[oy * ow + ox_lo..oy * ow + ox_hi];
                    let ix0 = ox_lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        d.copy_from_slice(&src_row[ix0..ix0 + d.len()]);
                    } else {
                        for (j, v) in d.iter_mut().enumerate() {
                            *v = src_row[ix0 + j * g.stride];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-and-adds column gradients back into `[Cin, H, W]`.
pub(crate) fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeometry, image_grad: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let k = g.kernel;
    let mut row = 0;
    for c in 0..g.channels_in {
        let plane = &mut image_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(ky, g, oh, g.height);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(kx, g, ow, g.width);
                if ox_lo == ox_hi {
                    row += 1;
                    continue;
                }
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.padding;
                    let dst_row = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let s = &src[oy * ow + ox_lo..oy * ow + ox_hi];
                    let ix0 = ox_lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        for (d, &v) in dst_row[ix0..ix0 + s.len()].iter_mut().zip(s) {
                            *d = *d + v;
                        }
                    } else {
                        for (j, &v) in s.iter().enumerate() {
                            let d = &mut dst_row[ix0 + j * g.stride];
                            *d = *d + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out[Cout, P] = weight[Cout, K] · col[K, P] + bias`.
pub(crate) fn forward_one<T: Scalar>(
    col: &[T],
    weight: &[T],
    bias: &[T],
    g: &ConvGeometry,
    out: &mut [T],
) {
    let (m, k, n) = (g.channels_out, g.col_rows(), g.col_cols());
    T::gemm(
        m,
        k,
        n,
        weight,
        (k as isize, 1),
        col,
        (n as isize, 1),
        T::zero(),
        out,
        (n as isize, 1),
    );
    for (co, &b) in bias.iter().enumerate() {
        for v in &mut out[co * n..(co + 1) * n] {
            *v = *v + b;
        }
    }
}

/// Accumulates `dW += dOut · colᵀ` and `db += Σ dOut` for one image.
pub(crate) fn backward_params_one<T: Scalar>(
    col: &[T],
    grad_out: &[T],
    g: &ConvGeometry,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) {
    let (m, k, n) = (g.channels_out, g.col_rows(), g.col_cols());
    T::gemm(
        m,
        n,
        k,
        grad_out,
        (n as isize, 1),
        col,
        (1, n as isize),
        T::one(),
        grad_weight,
        (k as isize, 1),
    );
    for (co, gb) in grad_bias.iter_mut().enumerate() {
        let s = grad_out[co * n..(co + 1) * n]
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        *gb = *gb + s;
    }
}

/// `dCol = Wᵀ · dOut` for one image.
pub(crate) fn backward_col_one<T: Scalar>(weight: &[T], grad_out: &[T], g: &ConvGeometry) -> Vec<T> {
    let (m, k, n) = (g.channels_out, g.col_rows(), g.col_cols());
    let mut dcol = vec![T::zero(); k * n];
    T::gemm(
        k,
        m,
        n,
        weight,
        (1, k as isize),
        grad_out,
        (n as isize, 1),
        T::zero(),
        &mut dcol,
        (n as isize, 1),
    );
    dcol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_im2col(image: &[f64], g: &ConvGeometry) -> Vec<f64> {
        let (oh, ow, k) = (g.out_height(), g.out_width(), g.kernel);
        let mut col = vec![0.0; g.col_rows() * oh * ow];
        for c in 0..g.channels_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width {
                                col[row * oh * ow + oy * ow + ox] =
                                    image[(c * g.height + iy as usize) * g.width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    #[test]
    fn unfold_matches_naive_and_is_adjoint() {
        for (h, w) in [(5, 5), (6, 7), (2, 3), (1, 1), (1, 4)] {
            for kernel in [1, 3, 5] {
                for stride in [1, 2] {
                    for padding in [0, 1, 2] {
                        if h + 2 * padding < kernel || w + 2 * padding < kernel {
                            continue;
                        }
                        let g = ConvGeometry {
                            channels_in: 2,
                            channels_out: 1,
                            height: h,
                            width: w,
                            kernel,
                            stride,
                            padding,
                        };
                        let x: Vec<f64> = (0..2 * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
                        let col = im2col(&x, &g);
                        assert_eq!(col, naive_im2col(&x, &g), "{h}x{w} k{kernel} s{stride} p{padding}");
                        let c: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.11).cos()).collect();
                        let mut back = vec![0.0; x.len()];
                        col2im_add(&c, &g, &mut back);
                        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
                        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
                        assert!((lhs - rhs).abs() < 1e-10);
                    }
                }
            }
        }
    }
}
