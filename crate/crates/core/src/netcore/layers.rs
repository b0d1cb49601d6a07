//! Fixed layer menu with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool(usize),
    RoiPool {
        out_h: usize,
        out_w: usize,
    },
    Fc(usize),
    Relu,
    Sigmoid,
}

/// A named trainable array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param {
            name,
            shape,
            values: vec![T::ZERO; n],
        }
    }

    fn he_uniform(name: String, shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| T::from_f64(rng.random_range(-limit..limit)))
            .collect();
        Param {
            name,
            shape,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv {
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        weight: Param<T>,
        bias: Param<T>,
    },
    MaxPool(usize),
    RoiPool {
        out_h: usize,
        out_w: usize,
    },
    Fc {
        input: usize,
        output: usize,
        weight: Param<T>,
        bias: Param<T>,
    },
    Relu,
    Sigmoid,
}

/// Values saved by `forward` for the backward pass.
#[derive(Clone, Debug)]
pub enum Cache<T> {
    Conv { input_shape: Vec<usize>, cols: Vec<T>, out_hw: (usize, usize) },
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Fc { input_shape: Vec<usize>, input: Vec<T> },
    Relu { active: Vec<bool> },
    Sigmoid { output: Vec<T> },
}

impl<T> Cache<T> {
    /// Discrete routing decisions (max-pool winners, active ReLUs). Finite
    /// differences are only meaningful where this does not change.
    pub fn same_routing(&self, other: &Cache<T>) -> bool {
        match (self, other) {
            (Cache::Pool { argmax: a, .. }, Cache::Pool { argmax: b, .. }) => a == b,
            (Cache::Relu { active: a }, Cache::Relu { active: b }) => a == b,
            _ => true,
        }
    }
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Integer bin `[start, end)` of bin `i` out of `bins` over `len` cells.
pub fn adaptive_bin(i: usize, bins: usize, len: usize) -> (usize, usize) {
    let start = i * len / bins;
    let end = ((i + 1) * len).div_ceil(bins);
    (start, end)
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer for an input of `in_shape`, returning the output shape.
    pub fn build(
        spec: LayerSpec,
        in_shape: &[usize],
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<(Layer<T>, Vec<usize>)> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match in_shape {
                [c, h, w] => Ok((*c, *h, *w)),
                _ => Err(Error::shape(format!("{what} needs a (c,h,w) input, got {in_shape:?}"))),
            }
        };
        Ok(match spec {
            LayerSpec::Conv {
                out_ch,
                k,
                stride,
                pad,
            } => {
                let (c, h, w) = spatial("conv")?;
                let (oh, ow) = conv_out(h, k, stride, pad)
                    .zip(conv_out(w, k, stride, pad))
                    .ok_or_else(|| Error::shape(format!("conv {k}x{k} on {h}x{w}")))?;
                let fan_in = c * k * k;
                let layer = Layer::Conv {
                    in_ch: c,
                    out_ch,
                    k,
                    stride,
                    pad,
                    weight: Param::he_uniform(format!("{prefix}.weight"), vec![out_ch, c, k, k], fan_in, rng),
                    bias: Param::zeros(format!("{prefix}.bias"), vec![out_ch]),
                };
                (layer, vec![out_ch, oh, ow])
            }
            LayerSpec::MaxPool(k) => {
                let (c, h, w) = spatial("max pool")?;
                if k == 0 || h < k || w < k {
                    return Err(Error::shape(format!("max pool {k} on {h}x{w}")));
                }
                (Layer::MaxPool(k), vec![c, h / k, w / k])
            }
            LayerSpec::RoiPool { out_h, out_w } => {
                let (c, h, w) = spatial("roi pool")?;
                if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
                    return Err(Error::shape(format!("roi pool {out_h}x{out_w} on {h}x{w}")));
                }
                (Layer::RoiPool { out_h, out_w }, vec![c, out_h, out_w])
            }
            LayerSpec::Fc(output) => {
                let input: usize = in_shape.iter().product();
                let layer = Layer::Fc {
                    input,
                    output,
                    weight: Param::he_uniform(format!("{prefix}.weight"), vec![output, input], input, rng),
                    bias: Param::zeros(format!("{prefix}.bias"), vec![output]),
                };
                (layer, vec![output])
            }
            LayerSpec::Relu => (Layer::Relu, in_shape.to_vec()),
            LayerSpec::Sigmoid => (Layer::Sigmoid, in_shape.to_vec()),
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        match self {
            Layer::Conv {
                in_ch,
                out_ch,
                k,
                stride,
                pad,
                weight,
                bias,
            } => {
                let (c, h, w) = x.chw();
                if c != *in_ch || x.shape().len() != 3 {
                    return Err(Error::shape(format!(
                        "conv expects {in_ch} input channels, got shape {:?}",
                        x.shape()
                    )));
                }
                let oh = conv_out(h, *k, *stride, *pad)
                    .ok_or_else(|| Error::shape(format!("conv {k}x{k} on {h}x{w}")))?;
                let ow = conv_out(w, *k, *stride, *pad)
                    .ok_or_else(|| Error::shape(format!("conv {k}x{k} on {h}x{w}")))?;
                let cols = im2col(x.data(), c, h, w, *k, *stride, *pad, oh, ow);
                let p = oh * ow;
                let kk = c * k * k;
                let mut out = vec![T::ZERO; out_ch * p];
                for (o, row) in out.chunks_mut(p).enumerate() {
                    row.fill(bias.values[o]);
                }
                matmul(*out_ch, kk, p, &weight.values, false, &cols, false, &mut out, true);
                Ok((
                    Tensor::from_vec(&[*out_ch, oh, ow], out)?,
                    Cache::Conv {
                        input_shape: x.shape().to_vec(),
                        cols,
                        out_hw: (oh, ow),
                    },
                ))
            }
            Layer::MaxPool(k) => {
                let (c, h, w) = x.chw();
                let (oh, ow) = (h / k, w / k);
                let mut out = Vec::with_capacity(c * oh * ow);
                let mut argmax = Vec::with_capacity(c * oh * ow);
                let d = x.data();
                for ch in 0..c {
                    for i in 0..oh {
                        let top = (ch * h + i * k) * w;
                        for j in 0..ow {
                            // same scan order as window_argmax: rows, then columns, first maximum wins
                            let mut best = top + j * k;
                            for r in 0..*k {
                                let row = top + r * w + j * k;
                                for idx in row..row + k {
                                    if d[idx] > d[best] {
                                        best = idx;
                                    }
                                }
                            }
                            out.push(d[best]);
                            argmax.push(best);
                        }
                    }
                }
                Ok((
                    Tensor::from_vec(&[c, oh, ow], out)?,
                    Cache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                ))
            }
            Layer::RoiPool { out_h, out_w } => {
                let (c, h, w) = x.chw();
                if *out_h > h || *out_w > w {
                    return Err(Error::shape(format!(
                        "roi pool {out_h}x{out_w} exceeds input {h}x{w}"
                    )));
                }
                let mut out = Vec::with_capacity(c * out_h * out_w);
                let mut argmax = Vec::with_capacity(c * out_h * out_w);
                for ch in 0..c {
                    for i in 0..*out_h {
                        let (r0, r1) = adaptive_bin(i, *out_h, h);
                        for j in 0..*out_w {
                            let (c0, c1) = adaptive_bin(j, *out_w, w);
                            let idx = window_argmax(x.data(), ch, h, w, r0, r1, c0, c1);
                            out.push(x.data()[idx]);
                            argmax.push(idx);
                        }
                    }
                }
                Ok((
                    Tensor::from_vec(&[c, *out_h, *out_w], out)?,
                    Cache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    },
                ))
            }
            Layer::Fc {
                input,
                output,
                weight,
                bias,
            } => {
                if x.len() != *input {
                    return Err(Error::shape(format!(
                        "fully connected layer expects {input} inputs, got {}",
                        x.len()
                    )));
                }
                let mut out = bias.values.clone();
                matmul(*output, *input, 1, &weight.values, false, x.data(), false, &mut out, true);
                Ok((
                    Tensor::from_vec(&[*output], out)?,
                    Cache::Fc {
                        input_shape: x.shape().to_vec(),
                        input: x.data().to_vec(),
                    },
                ))
            }
            Layer::Relu => {
                let active: Vec<bool> = x.data().iter().map(|&v| v > T::ZERO).collect();
                let out = x
                    .data()
                    .iter()
                    .zip(&active)
                    .map(|(&v, &a)| if a { v } else { T::ZERO })
                    .collect();
                Ok((Tensor::from_vec(x.shape(), out)?, Cache::Relu { active }))
            }
            Layer::Sigmoid => {
                let out: Vec<T> = x
                    .data()
                    .iter()
                    .map(|&v| T::from_f64(sigmoid(v.to_f64())))
                    .collect();
                Ok((
                    Tensor::from_vec(x.shape(), out.clone())?,
                    Cache::Sigmoid { output: out },
                ))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` (one entry per param, in
    /// `params()` order) and returns the input gradient when asked for.
    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
        grads: &mut [Vec<T>],
        want_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        match (self, cache) {
            (
                Layer::Conv {
                    in_ch,
                    out_ch,
                    k,
                    stride,
                    pad,
                    weight,
                    ..
                },
                Cache::Conv {
                    input_shape,
                    cols,
                    out_hw: (oh, ow),
                },
            ) => {
                let p = oh * ow;
                let kk = in_ch * k * k;
                let g = grad_out.data();
                let (gw, gb) = split_pair(grads);
                matmul(*out_ch, p, kk, g, false, cols, true, gw, true);
                for (o, row) in g.chunks(p).enumerate() {
                    let mut s = T::ZERO;
                    for &v in row {
                        s += v;
                    }
                    gb[o] += s;
                }
                if !want_input_grad {
                    return Ok(None);
                }
                let mut dcols = vec![T::ZERO; kk * p];
                matmul(kk, *out_ch, p, &weight.values, true, g, false, &mut dcols, false);
                let (_, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                let dx = col2im(&dcols, *in_ch, h, w, *k, *stride, *pad, *oh, *ow);
                Ok(Some(Tensor::from_vec(input_shape, dx)?))
            }
            (Layer::MaxPool(_) | Layer::RoiPool { .. }, Cache::Pool { input_shape, argmax }) => {
                if !want_input_grad {
                    return Ok(None);
                }
                let mut dx = Tensor::zeros(input_shape);
                let d = dx.data_mut();
                for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
                    d[idx] += g;
                }
                Ok(Some(dx))
            }
            (
                Layer::Fc {
                    input,
                    output,
                    weight,
                    ..
                },
                Cache::Fc {
                    input_shape,
                    input: x,
                },
            ) => {
                let g = grad_out.data();
                let (gw, gb) = split_pair(grads);
                // outer product g x^T
                matmul(*output, 1, *input, g, false, x, false, gw, true);
                for (b, &v) in gb.iter_mut().zip(g) {
                    *b += v;
                }
                if !want_input_grad {
                    return Ok(None);
                }
                let mut dx = vec![T::ZERO; *input];
                matmul(*input, *output, 1, &weight.values, true, g, false, &mut dx, false);
                Ok(Some(Tensor::from_vec(input_shape, dx)?))
            }
            (Layer::Relu, Cache::Relu { active }) => {
                let dx = grad_out
                    .data()
                    .iter()
                    .zip(active)
                    .map(|(&g, &a)| if a { g } else { T::ZERO })
                    .collect();
                Ok(Some(Tensor::from_vec(grad_out.shape(), dx)?))
            }
            (Layer::Sigmoid, Cache::Sigmoid { output }) => {
                let dx = grad_out
                    .data()
                    .iter()
                    .zip(output)
                    .map(|(&g, &y)| g * y * (T::ONE - y))
                    .collect();
                Ok(Some(Tensor::from_vec(grad_out.shape(), dx)?))
            }
            _ => Err(Error::shape("cache does not belong to this layer")),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn split_pair<T>(grads: &mut [Vec<T>]) -> (&mut [T], &mut [T]) {
    let (w, rest) = grads.split_first_mut().expect("weight gradient");
    (w.as_mut_slice(), rest[0].as_mut_slice())
}

#[allow(clippy::too_many_arguments)]
fn window_argmax<T: Scalar>(
    data: &[T],
    ch: usize,
    h: usize,
    w: usize,
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
) -> usize {
    let base = ch * h * w;
    let mut best = base + r0 * w + c0;
    let mut best_v = data[best];
    for r in r0..r1 {
        let row = base + r * w;
        for (c, &v) in data[row + c0..row + c1].iter().enumerate() {
            // first maximum wins on ties
            let better = v > best_v;
            best = if better { row + c0 + c } else { best };
            best_v = if better { v } else { best_v };
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let p = oh * ow;
    let mut cols = vec![T::ZERO; c * k * k * p];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for i in 0..oh {
                    let r = (i * stride + ki) as isize - pad as isize;
                    if r < 0 || r as usize >= h {
                        continue;
                    }
                    let src = &x[(ch * h + r as usize) * w..(ch * h + r as usize + 1) * w];
                    for j in 0..ow {
                        let cc = (j * stride + kj) as isize - pad as isize;
                        if cc >= 0 && (cc as usize) < w {
                            dst[i * ow + j] = src[cc as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let p = oh * ow;
    let mut x = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for i in 0..oh {
                    let r = (i * stride + ki) as isize - pad as isize;
                    if r < 0 || r as usize >= h {
                        continue;
                    }
                    let base = (ch * h + r as usize) * w;
                    for j in 0..ow {
                        let cc = (j * stride + kj) as isize - pad as isize;
                        if cc >= 0 && (cc as usize) < w {
                            x[base + cc as usize] += src[i * ow + j];
                        }
                    }
                }
            }
        }
    }
    x
}
