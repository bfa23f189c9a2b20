use super::conv::{self, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

/// Deliberately wrong backward rules, used as negative controls for the
/// finite-difference checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// `d(a·b)/da` returns `a` instead of `b`.
    MulOperand,
    /// The convolution weight gradient is scaled by 1.1.
    ConvWeight,
}

/// Binomial taps `[1, 4, 6, 4, 1] / 16`.
const BLUR_TAPS: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
        // Per-image column matrices; empty for pointwise convolutions.
        cols: Vec<Vec<T>>,
    },
    Activation(Var, Activation),
    Abs(Var),
    Upsample2x(Var),
    Binary(Var, Var, BinaryOp),
    Scale(Var, T),
    Concat(Var, Var),
    Sum(Var),
    Blur(Var),
    Downsample2(Var),
    Crop(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A computation graph recorded in execution order.
///
/// Node indices are a topological order by construction, so the graph is
/// acyclic and [`Tape::backward`] visits each node once by walking the
/// indices in reverse. A tape is single-threaded; independent tapes can
/// live on different threads.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    fault: Option<BackwardFault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: None,
        }
    }

    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` root with respect to `v`, if one reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get_mut(v.0)?.take()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g,
        })
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let wshape = self.value(weight).shape().to_vec();
        let [cout, wcin, kh, kw] = match *wshape.as_slice() {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::invalid(format!(
                    "conv2d: weight must be [Cout, Cin, k, k], got {wshape:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::invalid(format!(
                "conv2d: input channel dim (1) is {cin} but weight expects {wcin}"
            )));
        }
        if kh != kw {
            return Err(Error::invalid(format!(
                "conv2d: kernel must be square, got {kh}x{kw} (dims 2, 3)"
            )));
        }
        if kh % 2 == 0 {
            return Err(Error::invalid(format!("conv2d: kernel size {kh} must be odd")));
        }
        if self.value(bias).shape() != [cout] {
            return Err(Error::invalid(format!(
                "conv2d: bias dim 0 must be {cout}, got shape {:?}",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        if h + 2 * padding < kh {
            return Err(Error::invalid(format!(
                "conv2d: height (dim 2) {h} with padding {padding} is smaller than kernel {kh}"
            )));
        }
        if w + 2 * padding < kh {
            return Err(Error::invalid(format!(
                "conv2d: width (dim 3) {w} with padding {padding} is smaller than kernel {kh}"
            )));
        }
        let geometry = ConvGeometry {
            channels_in: cin,
            channels_out: cout,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
        };
        let (oh, ow) = (geometry.out_height(), geometry.out_width());
        let plane_in = cin * h * w;
        let plane_out = cout * oh * ow;
        let requires_grad = self.rg(input) || self.rg(weight) || self.rg(bias);
        let mut out = vec![T::zero(); n * plane_out];
        let mut cols = Vec::new();
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let b = self.value(bias).data();
            for i in 0..n {
                let img = &x[i * plane_in..(i + 1) * plane_in];
                let dst = &mut out[i * plane_out..(i + 1) * plane_out];
                if geometry.is_pointwise() {
                    conv::forward_one(img, wt, b, &geometry, dst);
                } else {
                    let col = conv::im2col(img, &geometry);
                    conv::forward_one(&col, wt, b, &geometry, dst);
                    if requires_grad {
                        cols.push(col);
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![n, cout, oh, ow],
            data: out,
        };
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                cols,
            },
            requires_grad,
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Sigmoid => {
                // Keep the output strictly inside (0, 1) even where the exponential saturates.
                let lo = T::epsilon() / T::from_f64(2.0);
                let hi = T::one() - lo;
                self.value(x)
                    .map(|v| (T::one() / (T::one() + (-v).exp())).max(lo).min(hi))
            }
        };
        let rg = self.rg(x);
        self.push(value, Op::Activation(x, kind), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        let rg = self.rg(x);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Sums every element into a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryOp) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "{kind:?}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| match kind {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            })
            .collect();
        let value = Tensor {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(a, b, kind), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Mul)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.value(a).dims4()?;
        let [nb, cb, hb, wb] = self.value(b).dims4()?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::invalid(format!(
                "concat_channels: shapes {:?} and {:?} differ outside the channel axis",
                self.shape(a),
                self.shape(b)
            )));
        }
        let plane = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for i in 0..na {
            data.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor {
            shape: vec![na, ca + cb, ha, wa],
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut data = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    d[y * ow + xx] = s[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor {
            shape: vec![n, c, oh, ow],
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Upsample2x(x), rg))
    }

    /// Separable `[1, 4, 6, 4, 1] / 16` blur with replicated borders.
    ///
    /// Accumulates in `f64`, so a constant plane maps to itself bit-exactly.
    pub fn blur(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len());
        for p in 0..n * c {
            let plane: Vec<f64> = src[p * h * w..(p + 1) * h * w]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            data.extend(blur_plane(&plane, h, w).into_iter().map(T::from_f64));
        }
        let value = Tensor {
            shape: vec![n, c, h, w],
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Blur(x), rg))
    }

    /// Keeps every even row and column; output is `ceil(H/2) × ceil(W/2)`.
    pub fn downsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    data.push(s[2 * y * w + 2 * xx]);
                }
            }
        }
        let value = Tensor {
            shape: vec![n, c, oh, ow],
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Downsample2(x), rg))
    }

    /// Keeps the top-left `height × width` window.
    pub fn crop(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if height > h || width > w {
            return Err(Error::invalid(format!(
                "crop: {height}x{width} exceeds input {h}x{w}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * height * width);
        for p in 0..n * c {
            for y in 0..height {
                let row = p * h * w + y * w;
                data.extend_from_slice(&src[row..row + width]);
            }
        }
        let value = Tensor {
            shape: vec![n, c, height, width],
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Crop(x), rg))
    }

    /// Reverse-mode sweep from a one-element `root`.
    ///
    /// Gradients accumulate additively across multiple uses of a node.
    /// Previous gradients on this tape are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward: root must have a single element, got shape {:?}",
                self.shape(root)
            )));
        }
        let nodes = &self.nodes;
        let fault = self.fault;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for id in (0..=root.0).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geometry,
                    cols,
                } => {
                    let n = node.value.shape[0];
                    let plane_out = geometry.channels_out * geometry.col_cols();
                    let plane_in = geometry.channels_in * geometry.height * geometry.width;
                    let x = nodes[input.0].value.data();
                    let wt = nodes[weight.0].value.data();
                    let col_of = |i: usize| -> &[T] {
                        if geometry.is_pointwise() {
                            &x[i * plane_in..(i + 1) * plane_in]
                        } else {
                            &cols[i]
                        }
                    };
                    if nodes[weight.0].requires_grad || nodes[bias.0].requires_grad {
                        let mut gw = vec![T::zero(); wt.len()];
                        let mut gb = vec![T::zero(); geometry.channels_out];
                        for i in 0..n {
                            conv::backward_params_one(
                                col_of(i),
                                &g[i * plane_out..(i + 1) * plane_out],
                                geometry,
                                &mut gw,
                                &mut gb,
                            );
                        }
                        if fault == Some(BackwardFault::ConvWeight) {
                            let k = T::from_f64(1.1);
                            gw.iter_mut().for_each(|v| *v = *v * k);
                        }
                        accumulate(&mut grads, nodes, *weight, |dst| add_into(dst, &gw));
                        accumulate(&mut grads, nodes, *bias, |dst| add_into(dst, &gb));
                    }
                    if nodes[input.0].requires_grad {
                        accumulate(&mut grads, nodes, *input, |dst| {
                            for i in 0..n {
                                let go = &g[i * plane_out..(i + 1) * plane_out];
                                let dcol = conv::backward_col_one(wt, go, geometry);
                                let di = &mut dst[i * plane_in..(i + 1) * plane_in];
                                if geometry.is_pointwise() {
                                    add_into(di, &dcol);
                                } else {
                                    conv::col2im_add(&dcol, geometry, di);
                                }
                            }
                        });
                    }
                }
                Op::Activation(x, kind) => {
                    let y = node.value.data();
                    let xv = nodes[x.0].value.data();
                    accumulate(&mut grads, nodes, *x, |dst| match kind {
                        Activation::Relu => {
                            for ((d, &gi), &xi) in dst.iter_mut().zip(&g).zip(xv) {
                                if xi > T::zero() {
                                    *d = *d + gi;
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            for ((d, &gi), &yi) in dst.iter_mut().zip(&g).zip(y) {
                                *d = *d + gi * yi * (T::one() - yi);
                            }
                        }
                    });
                }
                Op::Abs(x) => {
                    let xv = nodes[x.0].value.data();
                    accumulate(&mut grads, nodes, *x, |dst| {
                        for ((d, &gi), &xi) in dst.iter_mut().zip(&g).zip(xv) {
                            if xi > T::zero() {
                                *d = *d + gi;
                            } else if xi < T::zero() {
                                *d = *d - gi;
                            }
                        }
                    });
                }
                Op::Scale(x, k) => {
                    accumulate(&mut grads, nodes, *x, |dst| {
                        for (d, &gi) in dst.iter_mut().zip(&g) {
                            *d = *d + gi * *k;
                        }
                    });
                }
                Op::Sum(x) => {
                    let g0 = g[0];
                    accumulate(&mut grads, nodes, *x, |dst| {
                        dst.iter_mut().for_each(|d| *d = *d + g0);
                    });
                }
                Op::Binary(a, b, kind) => {
                    let va = nodes[a.0].value.data();
                    let vb = nodes[b.0].value.data();
                    match kind {
                        BinaryOp::Add => {
                            accumulate(&mut grads, nodes, *a, |dst| add_into(dst, &g));
                            accumulate(&mut grads, nodes, *b, |dst| add_into(dst, &g));
                        }
                        BinaryOp::Sub => {
                            accumulate(&mut grads, nodes, *a, |dst| add_into(dst, &g));
                            accumulate(&mut grads, nodes, *b, |dst| {
                                for (d, &gi) in dst.iter_mut().zip(&g) {
                                    *d = *d - gi;
                                }
                            });
                        }
                        BinaryOp::Mul => {
                            let da_src = if fault == Some(BackwardFault::MulOperand) {
                                va
                            } else {
                                vb
                            };
                            accumulate(&mut grads, nodes, *a, |dst| {
                                for ((d, &gi), &o) in dst.iter_mut().zip(&g).zip(da_src) {
                                    *d = *d + gi * o;
                                }
                            });
                            accumulate(&mut grads, nodes, *b, |dst| {
                                for ((d, &gi), &o) in dst.iter_mut().zip(&g).zip(va) {
                                    *d = *d + gi * o;
                                }
                            });
                        }
                    }
                }
                Op::Concat(a, b) => {
                    let [n, c, h, w] = node.value.dims4()?;
                    let ca = nodes[a.0].value.shape[1];
                    let cb = c - ca;
                    let plane = h * w;
                    accumulate(&mut grads, nodes, *a, |dst| {
                        for i in 0..n {
                            let src = &g[i * c * plane..(i * c + ca) * plane];
                            add_into(&mut dst[i * ca * plane..(i + 1) * ca * plane], src);
                        }
                    });
                    accumulate(&mut grads, nodes, *b, |dst| {
                        for i in 0..n {
                            let src = &g[(i * c + ca) * plane..(i + 1) * c * plane];
                            add_into(&mut dst[i * cb * plane..(i + 1) * cb * plane], src);
                        }
                    });
                }
                Op::Upsample2x(x) => {
                    let [n, c, h, w] = nodes[x.0].value.dims4()?;
                    let ow = 2 * w;
                    accumulate(&mut grads, nodes, *x, |dst| {
                        for p in 0..n * c {
                            let gs = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                            let d = &mut dst[p * h * w..(p + 1) * h * w];
                            for y in 0..h {
                                for xx in 0..w {
                                    let r0 = 2 * y * ow + 2 * xx;
                                    let r1 = r0 + ow;
                                    let s = ((gs[r0] + gs[r0 + 1]) + gs[r1]) + gs[r1 + 1];
                                    d[y * w + xx] = d[y * w + xx] + s;
                                }
                            }
                        }
                    });
                }
                Op::Blur(x) => {
                    let [n, c, h, w] = nodes[x.0].value.dims4()?;
                    accumulate(&mut grads, nodes, *x, |dst| {
                        for p in 0..n * c {
                            let gp: Vec<f64> = g[p * h * w..(p + 1) * h * w]
                                .iter()
                                .map(|v| v.as_f64())
                                .collect();
                            let back = blur_plane_adjoint(&gp, h, w);
                            for (d, b) in dst[p * h * w..(p + 1) * h * w].iter_mut().zip(back) {
                                *d = *d + T::from_f64(b);
                            }
                        }
                    });
                }
                Op::Downsample2(x) => {
                    let [n, c, h, w] = nodes[x.0].value.dims4()?;
                    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                    accumulate(&mut grads, nodes, *x, |dst| {
                        for p in 0..n * c {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let di = p * h * w + 2 * y * w + 2 * xx;
                                    dst[di] = dst[di] + g[p * oh * ow + y * ow + xx];
                                }
                            }
                        }
                    });
                }
                Op::Crop(x) => {
                    let [n, c, h, w] = nodes[x.0].value.dims4()?;
                    let [_, _, ch, cw] = node.value.dims4()?;
                    accumulate(&mut grads, nodes, *x, |dst| {
                        for p in 0..n * c {
                            for y in 0..ch {
                                let d = &mut dst[p * h * w + y * w..p * h * w + y * w + cw];
                                let s = &g[p * ch * cw + y * cw..p * ch * cw + (y + 1) * cw];
                                add_into(d, s);
                            }
                        }
                    });
                }
            }
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
    f(slot);
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

pub(crate) fn blur_plane(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, tap) in BLUR_TAPS.iter().enumerate() {
                acc += tap * row[clamp_index(x as isize + k as isize - 2, w)];
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, tap) in BLUR_TAPS.iter().enumerate() {
                acc += tap * horiz[clamp_index(y as isize + k as isize - 2, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn blur_plane_adjoint(grad: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut vert = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (k, tap) in BLUR_TAPS.iter().enumerate() {
                vert[clamp_index(y as isize + k as isize - 2, h) * w + x] += tap * g;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = vert[y * w + x];
            for (k, tap) in BLUR_TAPS.iter().enumerate() {
                out[y * w + clamp_index(x as isize + k as isize - 2, w)] += tap * g;
            }
        }
    }
    out
}
