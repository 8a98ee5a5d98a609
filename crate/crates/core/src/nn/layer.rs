//! Layer descriptors and their batched forward/backward kernels.
//!
//! Activations are stored sample-major (`N×C×H×W` or `N×F`), row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Op, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Non-overlapping max pooling (stride = size), floor semantics.
    MaxPool { size: usize },
    Relu,
    /// Parametric ReLU with one learnable slope per channel.
    Prelu { channels: usize },
    /// Inverted dropout with drop probability `p`.
    Dropout { p: f32 },
    /// Fully connected; flattens its input.
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Prelu { .. } => "prelu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    /// Shapes of the trainable tensors this layer owns.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Prelu { channels } => vec![vec![channels]],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape, or a description of why `input` is rejected.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let [c, h, w] = as_chw(input)?;
                if c != in_channels {
                    return Err(format!("expected {in_channels} input channels, got {c}"));
                }
                if stride == 0 || kernel == 0 {
                    return Err("zero kernel or stride".into());
                }
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(format!("{h}x{w} input smaller than {kernel}x{kernel} kernel"));
                }
                let oh = (h + 2 * pad - kernel) / stride + 1;
                let ow = (w + 2 * pad - kernel) / stride + 1;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::MaxPool { size } => {
                let [c, h, w] = as_chw(input)?;
                if size == 0 || h < size || w < size {
                    return Err(format!("{h}x{w} input cannot be pooled by {size}"));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(format!("dropout probability {p} outside [0, 1)"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Prelu { channels } => {
                if input.first() != Some(&channels) {
                    return Err(format!("expected {channels} channels, got shape {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let f: usize = input.iter().product();
                if f != in_features {
                    return Err(format!("expected {in_features} features, got {f}"));
                }
                Ok(vec![out_features])
            }
        }
    }

    /// Fan-in used for He initialization of this layer's weights.
    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Linear { in_features, .. } => in_features,
            _ => 1,
        }
    }
}

fn as_chw(shape: &[usize]) -> Result<[usize; 3], String> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        other => Err(format!("expected a CxHxW input, got shape {other:?}")),
    }
}

/// Conv geometry for one sample.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one `C×H×W` sample into a `(C·k·k)×(OH·OW)` matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, out: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut out[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Per-layer state retained by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum LayerCache<T> {
    Conv { cols: Vec<T> },
    Pool { argmax: Vec<u32> },
    Relu { input: Vec<T> },
    Prelu { input: Vec<T> },
    Dropout { mask: Option<Vec<T>> },
    Linear { input: Vec<T> },
    None,
}

pub(crate) struct LayerIo<'a> {
    pub batch: usize,
    pub in_shape: &'a [usize],
    pub out_shape: &'a [usize],
}

/// Runs one layer over a batch. Returns the output and, when `keep` is set,
/// the cache needed by [`layer_backward`].
pub(crate) fn layer_forward<T: Scalar>(
    spec: &LayerSpec,
    params: &[super::tensor::Tensor<T>],
    x: &[T],
    io: &LayerIo<'_>,
    train: bool,
    dropout_seed: u64,
    keep: bool,
) -> (Vec<T>, LayerCache<T>) {
    let n = io.batch;
    let in_len: usize = io.in_shape.iter().product();
    let out_len: usize = io.out_shape.iter().product();
    let mut y = vec![T::zero(); n * out_len];
    let cache = match *spec {
        LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
            ..
        } => {
            let g = ConvGeom {
                c: io.in_shape[0],
                h: io.in_shape[1],
                w: io.in_shape[2],
                k: kernel,
                stride,
                pad,
                oh: io.out_shape[1],
                ow: io.out_shape[2],
            };
            let (rows, ncols) = (g.rows(), g.cols());
            let weight = params[0].values();
            let bias = params[1].values();
            let mut all_cols = if keep {
                vec![T::zero(); n * rows * ncols]
            } else {
                vec![T::zero(); rows * ncols]
            };
            for s in 0..n {
                let cols = if keep {
                    &mut all_cols[s * rows * ncols..(s + 1) * rows * ncols]
                } else {
                    &mut all_cols[..]
                };
                im2col(&x[s * in_len..(s + 1) * in_len], &g, cols);
                let ys = &mut y[s * out_len..(s + 1) * out_len];
                for (oc, b) in bias.iter().enumerate() {
                    ys[oc * ncols..(oc + 1) * ncols].fill(*b);
                }
                gemm(out_channels, rows, ncols, weight, Op::N, cols, Op::N, T::one(), ys);
            }
            if keep {
                LayerCache::Conv { cols: all_cols }
            } else {
                LayerCache::None
            }
        }
        LayerSpec::MaxPool { size } => {
            let (c, h, w) = (io.in_shape[0], io.in_shape[1], io.in_shape[2]);
            let (oh, ow) = (io.out_shape[1], io.out_shape[2]);
            let mut argmax = if keep { vec![0u32; n * out_len] } else { Vec::new() };
            for s in 0..n {
                for ch in 0..c {
                    let base = s * in_len + ch * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best_i = base + oy * size * w + ox * size;
                            let mut best = x[best_i];
                            for dy in 0..size {
                                for dx in 0..size {
                                    let i = base + (oy * size + dy) * w + ox * size + dx;
                                    if x[i] > best {
                                        best = x[i];
                                        best_i = i;
                                    }
                                }
                            }
                            let o = s * out_len + ch * oh * ow + oy * ow + ox;
                            y[o] = best;
                            if keep {
                                argmax[o] = best_i as u32;
                            }
                        }
                    }
                }
            }
            if keep {
                LayerCache::Pool { argmax }
            } else {
                LayerCache::None
            }
        }
        LayerSpec::Relu => {
            for (o, &v) in y.iter_mut().zip(x) {
                *o = if v > T::zero() { v } else { T::zero() };
            }
            if keep {
                LayerCache::Relu { input: x.to_vec() }
            } else {
                LayerCache::None
            }
        }
        LayerSpec::Prelu { channels } => {
            let slopes = params[0].values();
            let per = in_len / channels;
            for s in 0..n {
                for (ch, &a) in slopes.iter().enumerate() {
                    let off = s * in_len + ch * per;
                    for i in off..off + per {
                        let v = x[i];
                        y[i] = if v > T::zero() { v } else { a * v };
                    }
                }
            }
            if keep {
                LayerCache::Prelu { input: x.to_vec() }
            } else {
                LayerCache::None
            }
        }
        LayerSpec::Dropout { p } => {
            if train && p > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                let scale = T::one() / T::from_f64_lossy(1.0 - p as f64);
                let mask: Vec<T> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f32>() < p {
                            T::zero()
                        } else {
                            scale
                        }
                    })
                    .collect();
                for ((o, &v), &m) in y.iter_mut().zip(x).zip(&mask) {
                    *o = v * m;
                }
                LayerCache::Dropout { mask: Some(mask) }
            } else {
                y.copy_from_slice(x);
                LayerCache::Dropout { mask: None }
            }
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let weight = params[0].values();
            let bias = params[1].values();
            for s in 0..n {
                y[s * out_features..(s + 1) * out_features].copy_from_slice(bias);
            }
            gemm(n, in_features, out_features, x, Op::N, weight, Op::T, T::one(), &mut y);
            if keep {
                LayerCache::Linear { input: x.to_vec() }
            } else {
                LayerCache::None
            }
        }
    };
    (y, cache)
}

/// Back-propagates `dy` through one layer, accumulating into `grads`
/// (one buffer per parameter tensor). Returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_backward<T: Scalar>(
    spec: &LayerSpec,
    params: &[super::tensor::Tensor<T>],
    cache: &LayerCache<T>,
    dy: &[T],
    io: &LayerIo<'_>,
    grads: &mut [Vec<T>],
    want_dx: bool,
) -> Option<Vec<T>> {
    let n = io.batch;
    let in_len: usize = io.in_shape.iter().product();
    let out_len: usize = io.out_shape.iter().product();
    match (spec, cache) {
        (
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            },
            LayerCache::Conv { cols },
        ) => {
            let g = ConvGeom {
                c: io.in_shape[0],
                h: io.in_shape[1],
                w: io.in_shape[2],
                k: *kernel,
                stride: *stride,
                pad: *pad,
                oh: io.out_shape[1],
                ow: io.out_shape[2],
            };
            let (rows, ncols) = (g.rows(), g.cols());
            let oc = *out_channels;
            let weight = params[0].values();
            let mut dx = want_dx.then(|| vec![T::zero(); n * in_len]);
            let mut dcols = vec![T::zero(); if want_dx { rows * ncols } else { 0 }];
            let (gw, rest) = grads.split_at_mut(1);
            for s in 0..n {
                let dys = &dy[s * out_len..(s + 1) * out_len];
                let cs = &cols[s * rows * ncols..(s + 1) * rows * ncols];
                gemm(oc, ncols, rows, dys, Op::N, cs, Op::T, T::one(), &mut gw[0]);
                for (o, gb) in rest[0].iter_mut().enumerate() {
                    *gb += dys[o * ncols..(o + 1) * ncols].iter().copied().sum::<T>();
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(rows, oc, ncols, weight, Op::T, dys, Op::N, T::zero(), &mut dcols);
                    col2im(&dcols, &g, &mut dx[s * in_len..(s + 1) * in_len]);
                }
            }
            dx
        }
        (LayerSpec::MaxPool { .. }, LayerCache::Pool { argmax }) => {
            if !want_dx {
                return None;
            }
            let mut dx = vec![T::zero(); n * in_len];
            for (&i, &d) in argmax.iter().zip(dy) {
                dx[i as usize] += d;
            }
            Some(dx)
        }
        (LayerSpec::Relu, LayerCache::Relu { input }) => want_dx.then(|| {
            input
                .iter()
                .zip(dy)
                .map(|(&x, &d)| if x > T::zero() { d } else { T::zero() })
                .collect()
        }),
        (LayerSpec::Prelu { channels }, LayerCache::Prelu { input }) => {
            let slopes = params[0].values();
            let per = in_len / channels;
            let mut dx = want_dx.then(|| vec![T::zero(); n * in_len]);
            for s in 0..n {
                for (ch, &a) in slopes.iter().enumerate() {
                    let off = s * in_len + ch * per;
                    let mut ga = T::zero();
                    for i in off..off + per {
                        let x = input[i];
                        if x > T::zero() {
                            if let Some(dx) = dx.as_mut() {
                                dx[i] = dy[i];
                            }
                        } else {
                            ga += x * dy[i];
                            if let Some(dx) = dx.as_mut() {
                                dx[i] = a * dy[i];
                            }
                        }
                    }
                    grads[0][ch] += ga;
                }
            }
            dx
        }
        (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => {
            want_dx.then(|| match mask {
                Some(m) => dy.iter().zip(m).map(|(&d, &m)| d * m).collect(),
                None => dy.to_vec(),
            })
        }
        (
            LayerSpec::Linear {
                in_features,
                out_features,
            },
            LayerCache::Linear { input },
        ) => {
            let (fi, fo) = (*in_features, *out_features);
            let (gw, rest) = grads.split_at_mut(1);
            gemm(fo, n, fi, dy, Op::T, input, Op::N, T::one(), &mut gw[0]);
            for s in 0..n {
                for (gb, &d) in rest[0].iter_mut().zip(&dy[s * fo..(s + 1) * fo]) {
                    *gb += d;
                }
            }
            want_dx.then(|| {
                let mut dx = vec![T::zero(); n * fi];
                gemm(n, fo, fi, dy, Op::N, params[0].values(), Op::N, T::zero(), &mut dx);
                dx
            })
        }
        _ => unreachable!("cache variant does not match layer {}", spec.kind_name()),
    }
}
