//! Layer kinds and their forward/backward passes.
//!
//! Activations are laid out batch-first, channels-last: `(N, H, W, C)` for
//! spatial tensors and `(N, F)` after flattening.

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    /// Batched tensor shape for `n` samples.
    pub fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            Shape::Spatial { h, w, c } => vec![n, h, w, c],
            Shape::Flat(f) => vec![n, f],
        }
    }
}

/// Architecture-level description of one layer, before weights exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3 same-padded convolution with this many filters.
    Conv(usize),
    MaxPool,
    Relu,
    Dropout(f64),
    Flatten,
    Dense(usize),
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `(9·in_ch, out_ch)`, rows ordered by kernel row, kernel column, input channel.
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `(inputs, outputs)`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    MaxPool2x2,
    Relu,
    Dropout { rate: f64 },
    Flatten,
    Dense(Dense),
    Softmax,
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { cols: Vec<f64> },
    Pool { argmax: Vec<usize> },
    Relu { mask: Vec<bool> },
    Dropout { scale: Option<Vec<f64>> },
    Flatten,
    Dense { input: Vec<f64> },
    Softmax { probs: Vec<f64> },
}

/// Glorot uniform: `±√(6 / (fan_in + fan_out))`.
fn uniform_init(rng: &mut Stream, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    (0..n).map(|_| rng.sample(dist)).collect()
}

impl Layer {
    /// Instantiates a spec against its input shape and returns the output shape.
    pub fn from_spec(spec: LayerSpec, input: Shape, rng: &mut Stream) -> Result<(Layer, Shape)> {
        match (spec, input) {
            (LayerSpec::Conv(filters), Shape::Spatial { h, w, c }) => {
                if filters == 0 {
                    return Err(Error::InvalidArgument(
                        "conv needs at least one filter".into(),
                    ));
                }
                let fan_in = 9 * c;
                let weight = Tensor::new(
                    vec![fan_in, filters],
                    uniform_init(rng, fan_in, 9 * filters, fan_in * filters),
                )?;
                let layer = Layer::Conv2d(Conv2d {
                    in_ch: c,
                    out_ch: filters,
                    weight,
                    bias: Tensor::zeros(&[filters]),
                });
                Ok((layer, Shape::Spatial { h, w, c: filters }))
            }
            (LayerSpec::MaxPool, Shape::Spatial { h, w, c }) => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "2×2 max pooling needs even spatial dims, got {h}×{w}"
                    )));
                }
                Ok((
                    Layer::MaxPool2x2,
                    Shape::Spatial {
                        h: h / 2,
                        w: w / 2,
                        c,
                    },
                ))
            }
            (LayerSpec::Relu, s) => Ok((Layer::Relu, s)),
            (LayerSpec::Dropout(rate), s) => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidArgument(format!(
                        "dropout rate must lie in [0, 1), got {rate}"
                    )));
                }
                Ok((Layer::Dropout { rate }, s))
            }
            (LayerSpec::Flatten, s) => Ok((Layer::Flatten, Shape::Flat(s.size()))),
            (LayerSpec::Dense(units), Shape::Flat(inputs)) => {
                if units == 0 {
                    return Err(Error::InvalidArgument(
                        "dense needs at least one unit".into(),
                    ));
                }
                let weight = Tensor::new(
                    vec![inputs, units],
                    uniform_init(rng, inputs, units, inputs * units),
                )?;
                let layer = Layer::Dense(Dense {
                    inputs,
                    outputs: units,
                    weight,
                    bias: Tensor::zeros(&[units]),
                });
                Ok((layer, Shape::Flat(units)))
            }
            (LayerSpec::Softmax, Shape::Flat(n)) => Ok((Layer::Softmax, Shape::Flat(n))),
            (spec, shape) => Err(Error::InvalidArgument(format!(
                "layer {spec:?} cannot follow activation shape {shape:?}"
            ))),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv(c.out_ch),
            Layer::MaxPool2x2 => LayerSpec::MaxPool,
            Layer::Relu => LayerSpec::Relu,
            Layer::Dropout { rate } => LayerSpec::Dropout(*rate),
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense(d.outputs),
            Layer::Softmax => LayerSpec::Softmax,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }

    /// Output shape for a given input shape (the layer is already validated).
    pub fn output_shape(&self, input: Shape) -> Shape {
        match (self, input) {
            (Layer::Conv2d(c), Shape::Spatial { h, w, .. }) => Shape::Spatial { h, w, c: c.out_ch },
            (Layer::MaxPool2x2, Shape::Spatial { h, w, c }) => Shape::Spatial {
                h: h / 2,
                w: w / 2,
                c,
            },
            (Layer::Flatten, s) => Shape::Flat(s.size()),
            (Layer::Dense(d), _) => Shape::Flat(d.outputs),
            (_, s) => s,
        }
    }

    /// Forward pass over a batch. `rng` drives dropout masks and is only
    /// consulted when `training` is set.
    pub fn forward(
        &self,
        x: &Tensor,
        input: Shape,
        training: bool,
        rng: &mut Stream,
        store: bool,
    ) -> Result<(Tensor, Option<LayerCache>)> {
        let n = x.batch();
        let out_shape = self.output_shape(input).batched(n);
        match self {
            Layer::Conv2d(conv) => {
                let Shape::Spatial { h, w, c } = input else {
                    unreachable!()
                };
                let cols = im2col(x.data(), n, h, w, c);
                let rows = n * h * w;
                let mut out = vec![0.0; rows * conv.out_ch];
                for r in 0..rows {
                    out[r * conv.out_ch..(r + 1) * conv.out_ch].copy_from_slice(conv.bias.data());
                }
                gemm(
                    rows,
                    9 * c,
                    conv.out_ch,
                    &cols,
                    false,
                    conv.weight.data(),
                    false,
                    1.0,
                    &mut out,
                );
                let cache = store.then_some(LayerCache::Conv { cols });
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::MaxPool2x2 => {
                let Shape::Spatial { h, w, c } = input else {
                    unreachable!()
                };
                let (oh, ow) = (h / 2, w / 2);
                let src = x.data();
                let mut out = Vec::with_capacity(n * oh * ow * c);
                let mut argmax = Vec::with_capacity(if store { n * oh * ow * c } else { 0 });
                for b in 0..n {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let mut best_idx = ((b * h + 2 * oy) * w + 2 * ox) * c + ch;
                                let mut best = src[best_idx];
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let idx = ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                    if src[idx] > best {
                                        best = src[idx];
                                        best_idx = idx;
                                    }
                                }
                                out.push(best);
                                if store {
                                    argmax.push(best_idx);
                                }
                            }
                        }
                    }
                }
                let cache = store.then_some(LayerCache::Pool { argmax });
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Relu => {
                let out = x.map(|v| v.max(0.0));
                let cache = store.then(|| LayerCache::Relu {
                    mask: x.data().iter().map(|&v| v > 0.0).collect(),
                });
                Ok((out, cache))
            }
            Layer::Dropout { rate } => {
                if !training || *rate == 0.0 {
                    return Ok((
                        x.clone(),
                        store.then_some(LayerCache::Dropout { scale: None }),
                    ));
                }
                let keep = 1.0 - rate;
                let scale: Vec<f64> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
                let cache = store.then_some(LayerCache::Dropout { scale: Some(scale) });
                Ok((Tensor::new(x.shape().to_vec(), data)?, cache))
            }
            Layer::Flatten => {
                let out = x.clone().reshape(out_shape)?;
                Ok((out, store.then_some(LayerCache::Flatten)))
            }
            Layer::Dense(d) => {
                let mut out = vec![0.0; n * d.outputs];
                for r in 0..n {
                    out[r * d.outputs..(r + 1) * d.outputs].copy_from_slice(d.bias.data());
                }
                gemm(
                    n,
                    d.inputs,
                    d.outputs,
                    x.data(),
                    false,
                    d.weight.data(),
                    false,
                    1.0,
                    &mut out,
                );
                let cache = store.then(|| LayerCache::Dense {
                    input: x.data().to_vec(),
                });
                Ok((Tensor::new(out_shape, out)?, cache))
            }
            Layer::Softmax => {
                let probs = softmax_rows(x);
                let cache = store.then(|| LayerCache::Softmax {
                    probs: probs.data().to_vec(),
                });
                Ok((probs, cache))
            }
        }
    }

    /// Backward pass: returns the gradient w.r.t. the layer input (when
    /// requested) and the gradients of this layer's parameters.
    pub fn backward(
        &self,
        input: Shape,
        cache: &LayerCache,
        grad_out: &Tensor,
        want_input: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        let n = grad_out.batch();
        let in_shape = input.batched(n);
        let g = grad_out.data();
        match (self, cache) {
            (Layer::Conv2d(conv), LayerCache::Conv { cols }) => {
                let Shape::Spatial { h, w, c } = input else {
                    unreachable!()
                };
                let rows = n * h * w;
                let k = 9 * c;
                let mut dw = vec![0.0; k * conv.out_ch];
                gemm(k, rows, conv.out_ch, cols, true, g, false, 0.0, &mut dw);
                let mut db = vec![0.0; conv.out_ch];
                for r in 0..rows {
                    for (acc, v) in db
                        .iter_mut()
                        .zip(&g[r * conv.out_ch..(r + 1) * conv.out_ch])
                    {
                        *acc += v;
                    }
                }
                let dx = if want_input {
                    let mut dcols = vec![0.0; rows * k];
                    gemm(
                        rows,
                        conv.out_ch,
                        k,
                        g,
                        false,
                        conv.weight.data(),
                        true,
                        0.0,
                        &mut dcols,
                    );
                    Some(Tensor::new(in_shape, col2im(&dcols, n, h, w, c))?)
                } else {
                    None
                };
                let grads = vec![
                    Tensor::new(conv.weight.shape().to_vec(), dw)?,
                    Tensor::new(vec![conv.out_ch], db)?,
                ];
                Ok((dx, grads))
            }
            (Layer::MaxPool2x2, LayerCache::Pool { argmax }) => {
                let mut dx = vec![0.0; input.size() * n];
                for (&idx, &v) in argmax.iter().zip(g) {
                    dx[idx] += v;
                }
                Ok((Some(Tensor::new(in_shape, dx)?), vec![]))
            }
            (Layer::Relu, LayerCache::Relu { mask }) => {
                let dx = g
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { v } else { 0.0 })
                    .collect();
                Ok((Some(Tensor::new(in_shape, dx)?), vec![]))
            }
            (Layer::Dropout { .. }, LayerCache::Dropout { scale }) => {
                let dx = match scale {
                    Some(s) => g.iter().zip(s).map(|(v, s)| v * s).collect(),
                    None => g.to_vec(),
                };
                Ok((Some(Tensor::new(in_shape, dx)?), vec![]))
            }
            (Layer::Flatten, LayerCache::Flatten) => {
                Ok((Some(grad_out.clone().reshape(in_shape)?), vec![]))
            }
            (Layer::Dense(d), LayerCache::Dense { input: x }) => {
                let mut dw = vec![0.0; d.inputs * d.outputs];
                gemm(d.inputs, n, d.outputs, x, true, g, false, 0.0, &mut dw);
                let mut db = vec![0.0; d.outputs];
                for r in 0..n {
                    for (acc, v) in db.iter_mut().zip(&g[r * d.outputs..(r + 1) * d.outputs]) {
                        *acc += v;
                    }
                }
                let dx = if want_input {
                    let mut dx = vec![0.0; n * d.inputs];
                    gemm(
                        n,
                        d.outputs,
                        d.inputs,
                        g,
                        false,
                        d.weight.data(),
                        true,
                        0.0,
                        &mut dx,
                    );
                    Some(Tensor::new(in_shape, dx)?)
                } else {
                    None
                };
                let grads = vec![
                    Tensor::new(d.weight.shape().to_vec(), dw)?,
                    Tensor::new(vec![d.outputs], db)?,
                ];
                Ok((dx, grads))
            }
            (Layer::Softmax, LayerCache::Softmax { probs }) => {
                let f = input.size();
                let mut dx = vec![0.0; n * f];
                for r in 0..n {
                    let p = &probs[r * f..(r + 1) * f];
                    let gr = &g[r * f..(r + 1) * f];
                    let dot: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..f {
                        dx[r * f + j] = p[j] * (gr[j] - dot);
                    }
                }
                Ok((Some(Tensor::new(in_shape, dx)?), vec![]))
            }
            _ => Err(Error::StaleCache(
                "layer cache kind does not match layer".into(),
            )),
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.batch() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Unfolds 3×3 same-padded patches into rows of `9·c` values.
fn im2col(src: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut cols = vec![0.0; n * h * w * k];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * k;
                for ky in 0..3 {
                    let iy = y + ky;
                    if iy < 1 || iy > h {
                        continue;
                    }
                    let iy = iy - 1;
                    for kx in 0..3 {
                        let ix = x + kx;
                        if ix < 1 || ix > w {
                            continue;
                        }
                        let ix = ix - 1;
                        let from = ((b * h + iy) * w + ix) * c;
                        let to = row + (ky * 3 + kx) * c;
                        cols[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
fn col2im(cols: &[f64], n: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let k = 9 * c;
    let mut dst = vec![0.0; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * k;
                for ky in 0..3 {
                    let iy = y + ky;
                    if iy < 1 || iy > h {
                        continue;
                    }
                    let iy = iy - 1;
                    for kx in 0..3 {
                        let ix = x + kx;
                        if ix < 1 || ix > w {
                            continue;
                        }
                        let ix = ix - 1;
                        let to = ((b * h + iy) * w + ix) * c;
                        let from = row + (ky * 3 + kx) * c;
                        for ch in 0..c {
                            dst[to + ch] += cols[from + ch];
                        }
                    }
                }
            }
        }
    }
    dst
}
