//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is a Wengert list: every operation appends a node holding its
//! output value and the handles of its inputs. Node order is a topological
//! order, so [`Tape::backward`] walks the list once in reverse.
//!
//! Convolutions are cross-correlations (no kernel flip), matching the usual
//! deep-learning layer convention. There is no implicit broadcasting apart
//! from a scalar right operand in [`Tape::add`], [`Tape::sub`] and
//! [`Tape::mul`]; row biases go through [`Tape::add_bias`].

mod conv;
pub(crate) mod kernels;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use conv::{conv_output_len, ConvGeometry};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    Sinh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
            Activation::Sinh => x.sinh(),
        }
    }

    /// Derivative given the input `x` and output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sinh => x.cosh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Sinh => "sinh",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            "sinh" => Ok(Activation::Sinh),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Activation(Var, Activation),
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    AvgPool2d {
        input: Var,
        out: (usize, usize),
    },
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    SegmentNorms {
        input: Var,
        segments: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation plus accumulated leaf gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a tensor as a leaf. Leaves with `requires_grad` receive
    /// gradients from [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => {
                return Err(Error::dim(format!("matmul of {sa:?} and {sb:?}")));
            }
        };
        let out = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let &[m, n] = ta.shape() else {
            return Err(Error::dim(format!("transpose needs rank 2, got {:?}", ta.shape())));
        };
        let value = Tensor::new(&[n, m], kernels::transpose(ta.data(), m, n))?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    fn ewise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else if tb.shape() == [1] {
            let y = tb.data()[0];
            ta.data().iter().map(|&x| f(x, y)).collect()
        } else {
            return Err(Error::dim(format!("{name} of {:?} and {:?}", ta.shape(), tb.shape())));
        };
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.ewise(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.ewise(a, b, "sub", |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product; `b` may be a one-element tensor.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.ewise(a, b, "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds a bias vector of length `n` to every row of an `[.., n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = *tx.shape().last().unwrap();
        if tb.shape() != [n] {
            return Err(Error::dim(format!(
                "bias {:?} does not match trailing axis of {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let b = tb.data();
        let data: Vec<f64> = tx
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&r, &c)| r + c))
            .collect();
        let value = Tensor::new(tx.shape(), data)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x).map(|v| kind.apply(v));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Activation(x, kind), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// N-dimensional cross-correlation with zero padding.
    ///
    /// `input` is `[C_in, *spatial]` or batched `[B, C_in, *spatial]`;
    /// `weight` is `[C_out, C_in, *kernel]`; `bias` is `[C_out]`. The spatial
    /// rank is taken from the weight.
    pub fn conv(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (ti, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        let geom = ConvGeometry::infer(ti.shape(), tw.shape(), stride, padding)?;
        if tb.shape() != [geom.c_out] {
            return Err(Error::dim(format!(
                "conv bias {:?} does not match {} output channels",
                tb.shape(),
                geom.c_out
            )));
        }
        let out = conv::forward(&geom, ti.data(), tw.data(), tb.data());
        let value = Tensor::new(&geom.output_shape(), out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Adaptive average pooling of `[C, H, W]` or `[B, C, H, W]` to `out`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, out: (usize, usize)) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        if shape.len() < 3 || shape.len() > 4 {
            return Err(Error::dim(format!(
                "avg pool needs [C,H,W] or [B,C,H,W], got {shape:?}"
            )));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if out.0 == 0 || out.1 == 0 || out.0 > h || out.1 > w {
            return Err(Error::dim(format!("cannot pool {h}x{w} to {}x{}", out.0, out.1)));
        }
        let planes = tx.len() / (h * w);
        let data = kernels::avg_pool_forward(tx.data(), planes, (h, w), out);
        let mut oshape = shape.to_vec();
        let r = oshape.len();
        oshape[r - 2] = out.0;
        oshape[r - 1] = out.1;
        let value = Tensor::new(&oshape, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::AvgPool2d { input: x, out }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat of {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open slice `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::dim(format!("slice {start}..{end} on axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            data.extend_from_slice(&tx.data()[base + start * inner..base + end * inner]);
        }
        let mut oshape = shape.to_vec();
        oshape[axis] = end - start;
        let value = Tensor::new(&oshape, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Slice { input: x, axis, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = kernels::pairwise_sum(self.value(x).data());
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Euclidean norms of consecutive segments along the last axis of a
    /// rank-2 tensor: `[B, sum(segments)] -> [B, segments.len()]`.
    ///
    /// The gradient of a zero-length norm is taken to be zero.
    pub fn segment_norms(&mut self, x: Var, segments: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let &[rows, d] = tx.shape() else {
            return Err(Error::dim(format!("segment norms need rank 2, got {:?}", tx.shape())));
        };
        if segments.is_empty() || segments.iter().sum::<usize>() != d || segments.contains(&0) {
            return Err(Error::dim(format!("segments {segments:?} do not tile width {d}")));
        }
        let mut data = Vec::with_capacity(rows * segments.len());
        for row in tx.data().chunks_exact(d) {
            let mut off = 0;
            for &len in segments {
                let ss: f64 = row[off..off + len].iter().map(|v| v * v).sum();
                data.push(ss.sqrt());
                off += len;
            }
        }
        let value = Tensor::new(&[rows, segments.len()], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::SegmentNorms {
                input: x,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// Accumulated gradient of a leaf, if any has been computed.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.value(v).shape(), g.clone()).expect("gradient shape"))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Propagates `d loss / d node` back through the tape. Leaf gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = local[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let acc = self.grads[idx].get_or_insert_with(|| vec![0.0; g.len()]);
                kernels::axpy(acc, 1.0, &g);
                continue;
            }
            self.propagate(idx, &g, &mut local);
        }

        // Leaves unreachable from the loss still get a (zero) gradient.
        for idx in 0..=loss.0 {
            let node = &self.nodes[idx];
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.grads[idx].is_none() {
                self.grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<f64>| match &mut local[v.0] {
            Some(acc) => kernels::axpy(acc, 1.0, &contrib),
            slot @ None => *slot = Some(contrib),
        };
        let node = &nodes[idx];
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Matmul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if wants(*a) {
                    send(*a, kernels::matmul_nt(g, tb.data(), m, n, k));
                }
                if wants(*b) {
                    send(*b, kernels::matmul_tn(ta.data(), g, m, k, n));
                }
            }
            Op::Transpose(a) => {
                let s = nodes[a.0].value.shape();
                send(*a, kernels::transpose(g, s[1], s[0]));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    send(*a, g.to_vec());
                }
                if wants(*b) {
                    if nodes[b.0].value.len() == g.len() {
                        send(*b, g.iter().map(|x| sign * x).collect());
                    } else {
                        send(*b, vec![sign * kernels::pairwise_sum(g)]);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let scalar_b = tb.len() != g.len();
                if wants(*a) {
                    let da = if scalar_b {
                        g.iter().map(|x| x * tb[0]).collect()
                    } else {
                        g.iter().zip(tb).map(|(x, y)| x * y).collect()
                    };
                    send(*a, da);
                }
                if wants(*b) {
                    let prod: Vec<f64> = g.iter().zip(ta).map(|(x, y)| x * y).collect();
                    if scalar_b {
                        send(*b, vec![kernels::pairwise_sum(&prod)]);
                    } else {
                        send(*b, prod);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if wants(*x) {
                    send(*x, g.to_vec());
                }
                if wants(*bias) {
                    let n = nodes[bias.0].value.len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        kernels::axpy(&mut db, 1.0, row);
                    }
                    send(*bias, db);
                }
            }
            Op::Activation(x, kind) => {
                let xin = nodes[x.0].value.data();
                let y = node.value.data();
                let dx = g
                    .iter()
                    .zip(xin.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                    .collect();
                send(*x, dx);
            }
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            } => {
                let grads = conv::backward(
                    geom,
                    nodes[input.0].value.data(),
                    nodes[weight.0].value.data(),
                    g,
                    wants(*input),
                    wants(*weight) || wants(*bias),
                );
                if let Some(dx) = grads.input {
                    send(*input, dx);
                }
                if wants(*weight) {
                    send(*weight, grads.weight);
                }
                if wants(*bias) {
                    send(*bias, grads.bias);
                }
            }
            Op::AvgPool2d { input, out } => {
                let s = nodes[input.0].value.shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = nodes[input.0].value.len() / (h * w);
                send(*input, kernels::avg_pool_backward(g, planes, (h, w), *out));
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let chunk = nodes[v.0].value.shape()[*axis] * inner;
                    if wants(*v) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * total + offset;
                            d.extend_from_slice(&g[base..base + chunk]);
                        }
                        send(*v, d);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let src = nodes[input.0].value.shape();
                let outer: usize = src[..*axis].iter().product();
                let inner: usize = src[axis + 1..].iter().product();
                let width = node.value.shape()[*axis] * inner;
                let mut d = vec![0.0; nodes[input.0].value.len()];
                for o in 0..outer {
                    let dst = o * src[*axis] * inner + start * inner;
                    d[dst..dst + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                send(*input, d);
            }
            Op::Sum(x) => send(*x, vec![g[0]; nodes[x.0].value.len()]),
            Op::SegmentNorms { input, segments } => {
                let xin = nodes[input.0].value.data();
                let norms = node.value.data();
                let d_total: usize = segments.iter().sum();
                let c = segments.len();
                let mut dx = vec![0.0; xin.len()];
                for (r, row) in xin.chunks_exact(d_total).enumerate() {
                    let mut off = 0;
                    for (s, &len) in segments.iter().enumerate() {
                        let nrm = norms[r * c + s];
                        if nrm > 0.0 {
                            let scale = g[r * c + s] / nrm;
                            let base = r * d_total + off;
                            for (dst, &xv) in dx[base..base + len].iter_mut().zip(&row[off..off + len]) {
                                *dst = scale * xv;
                            }
                        }
                        off += len;
                    }
                }
                send(*input, dx);
            }
        }
    }
}

#[cfg(test)]
mod tests;
