//! Layer kinds and their forward/backward rules.
//!
//! Convolutions are implemented as im2col + matrix products. The lifting and
//! group convolutions build an effective kernel bank by rotating a shared
//! base kernel once per group element, run an ordinary convolution with it,
//! and pull kernel gradients back through the adjoint of the rotation.
//! Feature maps with an orbit axis use channel index `c·u + v`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, dot4, gemm_acc, Param, Tensor};
use crate::error::{Error, Result};
use crate::groups::{CyclicGroup, PlaneRotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Image → `out_ch·u` channels, one per (filter, rotation).
    LiftingConv {
        order: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
    },
    /// `in_ch·u` → `out_ch·u` channels, equivariant under `C_u`.
    GroupConv {
        order: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        pad: usize,
    },
    /// Reduces the orbit axis: `c·u` → `c` channels.
    GroupPool {
        order: usize,
        mode: PoolMode,
    },
    /// Non-overlapping 2×2 mean pooling.
    AvgPool2,
    Relu,
    Flatten,
    SinusoidalTimeEmbed {
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvGroup {
    Plain,
    Lifting(usize),
    Group(usize),
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::ShapeMismatch(format!(
                "kernel {k} (stride {stride}, pad {pad}) does not fit a {h}x{w} input"
            )));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn n_out(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Writes the patch matrix of one item into columns `off..off + n_out`
    /// of a row-major matrix with `ld` columns.
    fn im2col(&self, x: &[f64], col: &mut [f64], ld: usize, off: usize) {
        let n = self.n_out();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * ld + off..row * ld + off + n];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.w_out..(oy + 1) * self.w_out];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    /// Scatters a transposed patch matrix (`n_out × patch`) back onto `x`.
    fn col2im_add_t(&self, col_t: &[f64], x: &mut [f64]) {
        let p = self.patch();
        for c in 0..self.c_in {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let q = (c * self.k + ky) * self.k + kx;
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += col_t[(oy * self.w_out + ox) * p + q];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    group: ConvGroup,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    weight: Param,
    bias: Param,
    rotations: Vec<PlaneRotation>,
}

impl ConvLayer {
    fn order(&self) -> usize {
        match self.group {
            ConvGroup::Plain => 1,
            ConvGroup::Lifting(u) | ConvGroup::Group(u) => u,
        }
    }

    fn in_eff(&self) -> usize {
        match self.group {
            ConvGroup::Group(u) => self.in_ch * u,
            _ => self.in_ch,
        }
    }

    fn out_eff(&self) -> usize {
        self.out_ch * self.order()
    }

    fn effective_kernel(&self) -> Vec<f64> {
        let kk = self.kernel * self.kernel;
        let w = self.weight.value.data();
        match self.group {
            ConvGroup::Plain => w.to_vec(),
            ConvGroup::Lifting(u) => {
                let mut eff = vec![0.0; self.out_ch * u * self.in_ch * kk];
                for o in 0..self.out_ch {
                    for (v, rot) in self.rotations.iter().enumerate() {
                        for i in 0..self.in_ch {
                            let src = &w[(o * self.in_ch + i) * kk..][..kk];
                            let dst = &mut eff[((o * u + v) * self.in_ch + i) * kk..][..kk];
                            rot.apply(src, dst);
                        }
                    }
                }
                eff
            }
            ConvGroup::Group(u) => {
                let in_eff = self.in_ch * u;
                let mut eff = vec![0.0; self.out_ch * u * in_eff * kk];
                for o in 0..self.out_ch {
                    for (v, rot) in self.rotations.iter().enumerate() {
                        for i in 0..self.in_ch {
                            for wi in 0..u {
                                let s = (wi + u - v) % u;
                                let src = &w[((o * self.in_ch + i) * u + s) * kk..][..kk];
                                let dst = &mut eff[((o * u + v) * in_eff + i * u + wi) * kk..][..kk];
                                rot.apply(src, dst);
                            }
                        }
                    }
                }
                eff
            }
        }
    }

    fn accumulate_kernel_grad(&mut self, eff_grad: &[f64]) {
        let kk = self.kernel * self.kernel;
        let (in_ch, out_ch) = (self.in_ch, self.out_ch);
        let grad = self.weight.grad.data_mut();
        match self.group {
            ConvGroup::Plain => axpy(1.0, eff_grad, grad),
            ConvGroup::Lifting(u) => {
                for o in 0..out_ch {
                    for (v, rot) in self.rotations.iter().enumerate() {
                        for i in 0..in_ch {
                            let src = &eff_grad[((o * u + v) * in_ch + i) * kk..][..kk];
                            let dst = &mut grad[(o * in_ch + i) * kk..][..kk];
                            rot.accumulate_adjoint(src, dst);
                        }
                    }
                }
            }
            ConvGroup::Group(u) => {
                let in_eff = in_ch * u;
                for o in 0..out_ch {
                    for (v, rot) in self.rotations.iter().enumerate() {
                        for i in 0..in_ch {
                            for wi in 0..u {
                                let s = (wi + u - v) % u;
                                let src = &eff_grad[((o * u + v) * in_eff + i * u + wi) * kk..][..kk];
                                let dst = &mut grad[((o * in_ch + i) * u + s) * kk..][..kk];
                                rot.accumulate_adjoint(src, dst);
                            }
                        }
                    }
                }
            }
        }
    }

    fn effective_bias(&self) -> Vec<f64> {
        let u = self.order();
        self.bias
            .value
            .data()
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b, u))
            .collect()
    }

    fn geom(&self, in_shape: &[usize]) -> Result<ConvGeom> {
        match in_shape {
            [c, h, w] if *c == self.in_eff() => ConvGeom::new(*c, *h, *w, self.kernel, self.stride, self.pad),
            _ => Err(Error::ShapeMismatch(format!(
                "convolution expects [{}, H, W], got {in_shape:?}",
                self.in_eff()
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Dense {
        input: usize,
        output: usize,
        weight: Param,
        bias: Param,
    },
    Conv(Box<ConvLayer>),
    GroupPool {
        order: usize,
        mode: PoolMode,
    },
    AvgPool2,
    Relu,
    Flatten,
    TimeEmbed {
        dim: usize,
    },
}

#[derive(Debug)]
pub(crate) enum LayerCache {
    Input(Tensor),
    Conv {
        in_shape: Vec<usize>,
        cols: Vec<f64>,
        kernel: Vec<f64>,
    },
    Argmax {
        in_shape: Vec<usize>,
        index: Vec<usize>,
    },
    Shape(Vec<usize>),
}

fn kaiming<R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl Layer {
    pub(crate) fn build<R: Rng + ?Sized>(spec: &LayerSpec, name: &str, rng: &mut R) -> Result<Layer> {
        let conv = |group: ConvGroup, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut R| {
            if in_ch == 0 || out_ch == 0 || kernel == 0 {
                return Err(Error::BadConfig(format!("{name}: empty convolution")));
            }
            let (u, w_shape, fan_in) = match group {
                ConvGroup::Plain => (1, vec![out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
                ConvGroup::Lifting(u) => (u, vec![out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel),
                ConvGroup::Group(u) => (u, vec![out_ch, in_ch, u, kernel, kernel], in_ch * u * kernel * kernel),
            };
            let g = CyclicGroup::new(u)?;
            let n: usize = w_shape.iter().product();
            let weight = Param::new(format!("{name}.weight"), Tensor::new(w_shape, kaiming(rng, n, fan_in))?);
            let bias = Param::new(format!("{name}.bias"), Tensor::zeros(vec![out_ch]));
            let rotations = match group {
                ConvGroup::Plain => Vec::new(),
                _ => g.elements().map(|e| PlaneRotation::new(kernel, &e)).collect(),
            };
            Ok(Layer::Conv(Box::new(ConvLayer {
                group,
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
                weight,
                bias,
                rotations,
            })))
        };
        match *spec {
            LayerSpec::Dense { input, output } => {
                if input == 0 || output == 0 {
                    return Err(Error::BadConfig(format!("{name}: empty dense layer")));
                }
                Ok(Layer::Dense {
                    input,
                    output,
                    weight: Param::new(
                        format!("{name}.weight"),
                        Tensor::new(vec![output, input], kaiming(rng, input * output, input))?,
                    ),
                    bias: Param::new(format!("{name}.bias"), Tensor::zeros(vec![output])),
                })
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => conv(ConvGroup::Plain, in_ch, out_ch, kernel, stride, pad, rng),
            LayerSpec::LiftingConv {
                order,
                in_ch,
                out_ch,
                kernel,
                pad,
            } => conv(ConvGroup::Lifting(order.max(1)), in_ch, out_ch, kernel, 1, pad, rng).and_then(|l| {
                CyclicGroup::new(order)?;
                Ok(l)
            }),
            LayerSpec::GroupConv {
                order,
                in_ch,
                out_ch,
                kernel,
                pad,
            } => conv(ConvGroup::Group(order.max(1)), in_ch, out_ch, kernel, 1, pad, rng).and_then(|l| {
                CyclicGroup::new(order)?;
                Ok(l)
            }),
            LayerSpec::GroupPool { order, mode } => {
                CyclicGroup::new(order)?;
                Ok(Layer::GroupPool { order, mode })
            }
            LayerSpec::AvgPool2 => Ok(Layer::AvgPool2),
            LayerSpec::Relu => Ok(Layer::Relu),
            LayerSpec::Flatten => Ok(Layer::Flatten),
            LayerSpec::SinusoidalTimeEmbed { dim } => {
                if dim < 2 || dim % 2 != 0 {
                    return Err(Error::BadConfig(format!("{name}: time embedding dim must be even")));
                }
                Ok(Layer::TimeEmbed { dim })
            }
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub(crate) fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { input: n_in, output, .. } => match input {
                [d] if d == n_in => Ok(vec![*output]),
                _ => Err(Error::ShapeMismatch(format!("dense expects [{n_in}], got {input:?}"))),
            },
            Layer::Conv(c) => {
                let g = c.geom(input)?;
                Ok(vec![c.out_eff(), g.h_out, g.w_out])
            }
            Layer::GroupPool { order, .. } => match input {
                [ch, h, w] if ch % order == 0 => Ok(vec![ch / order, *h, *w]),
                _ => Err(Error::ShapeMismatch(format!(
                    "group pool over C_{order} expects [c*{order}, H, W], got {input:?}"
                ))),
            },
            Layer::AvgPool2 => match input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![*c, h / 2, w / 2]),
                _ => Err(Error::ShapeMismatch(format!("2x2 pooling needs even H, W, got {input:?}"))),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::TimeEmbed { dim } => match input {
                [1] => Ok(vec![*dim]),
                _ => Err(Error::ShapeMismatch(format!("time embedding expects [1], got {input:?}"))),
            },
        }
    }

    pub(crate) fn forward(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Option<LayerCache>)> {
        let in_item = x.shape()[1..].to_vec();
        let out_item = self.output_shape(&in_item)?;
        let b = x.batch();
        let mut out_shape = vec![b];
        out_shape.extend_from_slice(&out_item);
        match self {
            Layer::Dense { input, output, weight, bias } => {
                let (w, bv) = (weight.value.data(), bias.value.data());
                let mut out = Vec::with_capacity(b * output);
                for i in 0..b {
                    let xi = x.item(i);
                    for o in 0..*output {
                        out.push(dot(&w[o * input..(o + 1) * input], xi) + bv[o]);
                    }
                }
                let cache = keep.then(|| LayerCache::Input(x.clone()));
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Conv(c) => {
                let g = c.geom(&in_item)?;
                let kernel = c.effective_kernel();
                let bias = c.effective_bias();
                let (o_eff, p, n) = (c.out_eff(), g.patch(), g.n_out());
                // One product over the whole batch: columns are (item, position).
                let wide = b * n;
                let mut cols = vec![0.0; p * wide];
                for i in 0..b {
                    g.im2col(x.item(i), &mut cols, wide, i * n);
                }
                let mut prod = vec![0.0; o_eff * wide];
                for (o, row) in prod.chunks_exact_mut(wide).enumerate() {
                    row.iter_mut().for_each(|v| *v = bias[o]);
                }
                gemm_acc(&kernel, &cols, &mut prod, o_eff, p, wide);
                let mut out = vec![0.0; b * o_eff * n];
                for o in 0..o_eff {
                    for i in 0..b {
                        out[(i * o_eff + o) * n..(i * o_eff + o + 1) * n]
                            .copy_from_slice(&prod[o * wide + i * n..o * wide + (i + 1) * n]);
                    }
                }
                if !keep {
                    cols = Vec::new();
                }
                let cache = keep.then(|| LayerCache::Conv {
                    in_shape: x.shape().to_vec(),
                    cols,
                    kernel,
                });
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::GroupPool { order, mode } => {
                let (ch, hw) = (in_item[0], in_item[1] * in_item[2]);
                let c_out = ch / order;
                let mut out = vec![0.0; b * c_out * hw];
                let mut index = Vec::new();
                if *mode == PoolMode::Max && keep {
                    index = vec![0usize; b * c_out * hw];
                }
                for i in 0..b {
                    let xi = x.item(i);
                    for c in 0..c_out {
                        for s in 0..hw {
                            let at = (i * c_out + c) * hw + s;
                            match mode {
                                PoolMode::Mean => {
                                    let sum: f64 = (0..*order).map(|v| xi[(c * order + v) * hw + s]).sum();
                                    out[at] = sum / *order as f64;
                                }
                                PoolMode::Max => {
                                    let mut best = (0, f64::NEG_INFINITY);
                                    for v in 0..*order {
                                        let val = xi[(c * order + v) * hw + s];
                                        if val > best.1 {
                                            best = (v, val);
                                        }
                                    }
                                    out[at] = best.1;
                                    if keep {
                                        index[at] = best.0;
                                    }
                                }
                            }
                        }
                    }
                }
                let cache = keep.then(|| LayerCache::Argmax {
                    in_shape: x.shape().to_vec(),
                    index,
                });
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::AvgPool2 => {
                let (c, h, w) = (in_item[0], in_item[1], in_item[2]);
                let (ho, wo) = (h / 2, w / 2);
                let mut out = vec![0.0; b * c * ho * wo];
                for i in 0..b {
                    let xi = x.item(i);
                    for ch in 0..c {
                        let plane = &xi[ch * h * w..];
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let (y0, x0) = (2 * oy, 2 * ox);
                                let s = (plane[y0 * w + x0] + plane[y0 * w + x0 + 1])
                                    + (plane[(y0 + 1) * w + x0] + plane[(y0 + 1) * w + x0 + 1]);
                                out[((i * c + ch) * ho + oy) * wo + ox] = 0.25 * s;
                            }
                        }
                    }
                }
                let cache = keep.then(|| LayerCache::Shape(x.shape().to_vec()));
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Relu => {
                let out: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
                let cache = keep.then(|| LayerCache::Input(x.clone()));
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Flatten => {
                let cache = keep.then(|| LayerCache::Shape(x.shape().to_vec()));
                Ok((x.clone().reshape(out_shape)?, cache))
            }
            Layer::TimeEmbed { dim } => {
                let half = dim / 2;
                let mut out = Vec::with_capacity(b * dim);
                for i in 0..b {
                    let k = x.item(i)[0];
                    let (sin, cos): (Vec<f64>, Vec<f64>) =
                        (0..half).map(|j| (k * time_frequency(j, half)).sin_cos()).unzip();
                    out.extend(sin);
                    out.extend(cos);
                }
                let cache = keep.then(|| LayerCache::Input(x.clone()));
                Ok((Tensor::new(out_shape, out)?, cache))
            }
        }
    }

    /// Accumulates parameter gradients (trainable params only) and returns
    /// the gradient with respect to the layer input.
    /// With `need_input_grad == false` the returned tensor is zeros (only
    /// convolutions take the shortcut).
    pub(crate) fn backward(&mut self, cache: &LayerCache, grad: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Dense { input, output, weight, bias }, LayerCache::Input(x)) => {
                let b = x.batch();
                let (n_in, n_out) = (*input, *output);
                let mut gx = vec![0.0; b * n_in];
                let w = weight.value.data().to_vec();
                let train = weight.trainable;
                for i in 0..b {
                    let xi = x.item(i);
                    let gi = grad.item(i);
                    let gxi = &mut gx[i * n_in..(i + 1) * n_in];
                    for o in 0..n_out {
                        let go = gi[o];
                        if go == 0.0 {
                            continue;
                        }
                        axpy(go, &w[o * n_in..(o + 1) * n_in], gxi);
                        if train {
                            axpy(go, xi, &mut weight.grad.data_mut()[o * n_in..(o + 1) * n_in]);
                            bias.grad.data_mut()[o] += go;
                        }
                    }
                }
                Tensor::new(x.shape().to_vec(), gx)
            }
            (Layer::Conv(c), LayerCache::Conv { in_shape, cols, kernel }) => {
                let g = c.geom(&in_shape[1..])?;
                let b = in_shape[0];
                let (o_eff, p, n) = (c.out_eff(), g.patch(), g.n_out());
                let item_in: usize = in_shape[1..].iter().product();
                let train = c.weight.trainable;
                let wide = b * n;
                // Output gradient as `o_eff × (item, position)`, matching `cols`.
                let mut gw = vec![0.0; o_eff * wide];
                for i in 0..b {
                    let go = grad.item(i);
                    for o in 0..o_eff {
                        gw[o * wide + i * n..o * wide + (i + 1) * n].copy_from_slice(&go[o * n..(o + 1) * n]);
                    }
                }
                let mut kgrad = vec![0.0; o_eff * p];
                let mut bgrad = vec![0.0; o_eff];
                if train {
                    for o in 0..o_eff {
                        bgrad[o] = gw[o * wide..(o + 1) * wide].iter().sum::<f64>();
                    }
                    let blocked = o_eff / 4 * 4;
                    for o in (0..blocked).step_by(4) {
                        let g4: [&[f64]; 4] = std::array::from_fn(|r| &gw[(o + r) * wide..(o + r + 1) * wide]);
                        for q in 0..p {
                            let d = dot4(g4, &cols[q * wide..(q + 1) * wide]);
                            kgrad[o * p + q..].iter_mut().step_by(p).zip(d).for_each(|(k, v)| *k += v);
                        }
                    }
                    for o in blocked..o_eff {
                        let grow = &gw[o * wide..(o + 1) * wide];
                        for q in 0..p {
                            kgrad[o * p + q] += dot(grow, &cols[q * wide..(q + 1) * wide]);
                        }
                    }
                }
                let mut gx = vec![0.0; b * item_in];
                if need_input_grad {
                    // Per item: patch gradient (n × p) = gradᵀ (n × o_eff) · kernel.
                    let mut gt = vec![0.0; n * o_eff];
                    let mut gcol_t = vec![0.0; n * p];
                    for i in 0..b {
                        let go = grad.item(i);
                        for o in 0..o_eff {
                            for j in 0..n {
                                gt[j * o_eff + o] = go[o * n + j];
                            }
                        }
                        gcol_t.iter_mut().for_each(|v| *v = 0.0);
                        gemm_acc(&gt, kernel, &mut gcol_t, n, o_eff, p);
                        g.col2im_add_t(&gcol_t, &mut gx[i * item_in..(i + 1) * item_in]);
                    }
                }
                if train {
                    c.accumulate_kernel_grad(&kgrad);
                    let u = c.order();
                    let bg = c.bias.grad.data_mut();
                    for (o, v) in bgrad.iter().enumerate() {
                        bg[o / u] += v;
                    }
                }
                Tensor::new(in_shape.clone(), gx)
            }
            (Layer::GroupPool { order, mode }, LayerCache::Argmax { in_shape, index }) => {
                let b = in_shape[0];
                let (ch, hw) = (in_shape[1], in_shape[2] * in_shape[3]);
                let c_out = ch / *order;
                let mut gx = vec![0.0; b * ch * hw];
                for i in 0..b {
                    let gi = grad.item(i);
                    for c in 0..c_out {
                        for s in 0..hw {
                            let g = gi[c * hw + s];
                            match mode {
                                PoolMode::Mean => {
                                    for v in 0..*order {
                                        gx[((i * ch) + c * *order + v) * hw + s] += g / *order as f64;
                                    }
                                }
                                PoolMode::Max => {
                                    let v = index[(i * c_out + c) * hw + s];
                                    gx[((i * ch) + c * *order + v) * hw + s] += g;
                                }
                            }
                        }
                    }
                }
                Tensor::new(in_shape.clone(), gx)
            }
            (Layer::AvgPool2, LayerCache::Shape(in_shape)) => {
                let (b, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
                let (ho, wo) = (h / 2, w / 2);
                let mut gx = vec![0.0; b * c * h * w];
                for i in 0..b {
                    for ch in 0..c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = 0.25 * grad.data()[((i * c + ch) * ho + oy) * wo + ox];
                                let base = (i * c + ch) * h * w;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    gx[base + (2 * oy + dy) * w + 2 * ox + dx] += g;
                                }
                            }
                        }
                    }
                }
                Tensor::new(in_shape.clone(), gx)
            }
            (Layer::Relu, LayerCache::Input(x)) => {
                let gx = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), gx)
            }
            (Layer::Flatten, LayerCache::Shape(in_shape)) => grad.clone().reshape(in_shape.clone()),
            (Layer::TimeEmbed { dim }, LayerCache::Input(x)) => {
                let half = *dim / 2;
                let b = x.batch();
                let mut gx = vec![0.0; b];
                for (i, gxi) in gx.iter_mut().enumerate() {
                    let k = x.item(i)[0];
                    let gi = grad.item(i);
                    for j in 0..half {
                        let f = time_frequency(j, half);
                        let (s, c) = (k * f).sin_cos();
                        *gxi += gi[j] * f * c - gi[half + j] * f * s;
                    }
                }
                Tensor::new(x.shape().to_vec(), gx)
            }
            _ => Err(Error::StaleActivations),
        }
    }
}

fn time_frequency(j: usize, half: usize) -> f64 {
    if half <= 1 {
        return 1.0;
    }
    (-(10_000f64.ln()) * j as f64 / (half - 1) as f64).exp()
}

/// Standalone sinusoidal embedding of a scalar step index.
pub fn sinusoidal_embedding(k: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|j| (k * time_frequency(j, half)).sin()));
    out.extend((0..half).map(|j| (k * time_frequency(j, half)).cos()));
    out
}
