//! Dynamic reverse-mode tape.
//!
//! Every forward pass records its operations on a fresh [`Tape`]. Values are
//! computed eagerly; [`Tape::gradients`] replays the records in reverse and
//! returns per-parameter gradients. Matrix products and convolutions also bump
//! a multiply-accumulate counter so the analytic complexity model can be
//! checked against what a forward pass actually executed.

use super::dense::{axis_split, gemm, softmax};
use super::params::{Gradients, ParamId, ParamKey, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Mean(Var, usize),
    Max(Var, Vec<usize>),
    Sum(Var),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Embedding {
        table: Var,
        index: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    frozen: u64,
    no_grad: bool,
    macs: u64,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn conv_out_len(l_in: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = l_in + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that never tracks gradients (inference and MAC counting).
    pub fn inference() -> Self {
        Tape {
            no_grad: true,
            ..Self::default()
        }
    }

    /// Parameters of `group` enter this tape as constants.
    pub fn freeze_group(mut self, group: u16) -> Self {
        self.frozen |= 1 << group;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by matrix products and convolutions so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && !self.no_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained (used for input-gradient checks).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let key = set.key(id);
        let p = set.get(id);
        let track = p.trainable && self.frozen & (1 << key.group) == 0;
        self.push(p.value.clone(), Op::Param(key), track)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        self.macs += (m * k * n) as u64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// `x[..., j] + bias[j]`, broadcasting over all leading dimensions.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = *xv.shape().last().unwrap();
        if bv.len() != n {
            return Err(shape_err("add_bias", xv, bv));
        }
        let data = xv
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(a, b)| a + b))
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `x[r, c] * s[r]` for a matrix `x` and a vector `s` with one entry per row.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let (r, c) = xv.dims2()?;
        if sv.len() != r {
            return Err(shape_err("scale_rows", xv, sv));
        }
        let mut data = xv.data().to_vec();
        for (row, f) in data.chunks_mut(c).zip(sv.data()) {
            for v in row {
                *v *= f;
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(t, Op::ScaleRows(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, c), rg)
    }

    /// `x / c`, elementwise.
    pub fn div_scalar(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x).map(|v| v / c);
        let rg = self.rg(x);
        self.push(t, Op::DivScalar(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(stable_sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numerical("ln of a non-positive value".into()));
        }
        let t = xv.map(f64::ln);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Ln(x), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = softmax(self.value(x), axis)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x, axis), rg))
    }

    /// Normalises over the last dimension, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().unwrap();
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(shape_err("layer_norm", xv, self.value(gamma)));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// 1-D convolution of `x: [C_in, L]` with `w: [C_out, C_in, K]` and
    /// `b: [C_out]`, zero padding `pad` on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (c_in, l_in) = xv.dims2()?;
        let [c_out, wc_in, k] = *wv.shape() else {
            return Err(shape_err("conv1d", xv, wv));
        };
        if wc_in != c_in || self.value(b).len() != c_out {
            return Err(shape_err("conv1d", xv, wv));
        }
        let l_out = conv_out_len(l_in, k, stride, pad).ok_or_else(|| shape_err("conv1d", xv, wv))?;
        let ck = c_in * k;
        let mut cols = vec![0.0; ck * l_out];
        let xd = xv.data();
        for ci in 0..c_in {
            for kk in 0..k {
                let dst = &mut cols[(ci * k + kk) * l_out..(ci * k + kk + 1) * l_out];
                for (lo, d) in dst.iter_mut().enumerate() {
                    let pos = lo * stride + kk;
                    if pos >= pad && pos - pad < l_in {
                        *d = xd[ci * l_in + pos - pad];
                    }
                }
            }
        }
        let mut out = vec![0.0; c_out * l_out];
        for (row, bias) in out.chunks_mut(l_out).zip(self.value(b).data()) {
            row.fill(*bias);
        }
        gemm(c_out, ck, l_out, wv.data(), false, &cols, false, &mut out, true);
        self.macs += (c_out * ck * l_out) as u64;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let t = Tensor::from_parts(vec![c_out, l_out], out);
        Ok(self.push(
            t,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Transposed 1-D convolution of `x: [C_in, L]` with `w: [C_in, C_out, K]`;
    /// output length `(L - 1) * stride - 2 * pad + K`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (c_in, l_in) = xv.dims2()?;
        let [wc_in, c_out, k] = *wv.shape() else {
            return Err(shape_err("conv_transpose1d", xv, wv));
        };
        if wc_in != c_in || self.value(b).len() != c_out || stride == 0 {
            return Err(shape_err("conv_transpose1d", xv, wv));
        }
        let full = (l_in - 1) * stride + k;
        if full <= 2 * pad {
            return Err(shape_err("conv_transpose1d", xv, wv));
        }
        let l_out = full - 2 * pad;
        let ck = c_out * k;
        let mut cols = vec![0.0; ck * l_in];
        gemm(ck, c_in, l_in, wv.data(), true, xv.data(), false, &mut cols, false);
        self.macs += (c_in * ck * l_in) as u64;
        let mut out = vec![0.0; c_out * l_out];
        for (co, bias) in self.value(b).data().iter().enumerate() {
            out[co * l_out..(co + 1) * l_out].fill(*bias);
        }
        for co in 0..c_out {
            for kk in 0..k {
                let src = &cols[(co * k + kk) * l_in..(co * k + kk + 1) * l_in];
                for (l, v) in src.iter().enumerate() {
                    let pos = l * stride + kk;
                    if pos >= pad && pos - pad < l_out {
                        out[co * l_out + pos - pad] += v;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let t = Tensor::from_parts(vec![c_out, l_out], out);
        Ok(self.push(
            t,
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Index {
                what: "mean axis",
                index: axis,
                bound: xv.rank(),
            });
        }
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += xv.data()[(o * n + j) * inner + i];
                }
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let t = Tensor::from_parts(reduced_shape(xv.shape(), axis), out);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Mean(x, axis), rg))
    }

    /// Maximum along `axis`; ties resolve to the first index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Index {
                what: "max axis",
                index: axis,
                bound: xv.rank(),
            });
        }
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * n) * inner + i;
                for j in 1..n {
                    let at = (o * n + j) * inner + i;
                    if xv.data()[at] > xv.data()[best] {
                        best = at;
                    }
                }
                out[o * inner + i] = xv.data()[best];
                arg[o * inner + i] = best;
            }
        }
        let t = Tensor::from_parts(reduced_shape(xv.shape(), axis), out);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Max(x, arg), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(t, Op::Sum(x), rg)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| Error::contract("concat of nothing"))?);
        if axis >= first.rank() {
            return Err(Error::Index {
                what: "concat axis",
                index: axis,
                bound: first.rank(),
            });
        }
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if s.len() != shape.len()
                || s.iter().enumerate().any(|(i, d)| i != axis && *d != shape[i])
            {
                return Err(shape_err("concat", first, self.value(v)));
            }
            total += s[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let vv = self.value(v);
                let n = vv.shape()[axis];
                out.extend_from_slice(&vv.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || len == 0 || start + len > xv.shape()[axis] {
            return Err(Error::Index {
                what: "narrow range",
                index: start + len,
                bound: xv.shape().get(axis).copied().unwrap_or(0),
            });
        }
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Narrow { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose2()?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    /// Row `index` of a `[rows, d]` table, returned as a `[d]` vector.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let tv = self.value(table);
        let (rows, d) = tv.dims2()?;
        if index >= rows {
            return Err(Error::Index {
                what: "embedding row",
                index,
                bound: rows,
            });
        }
        let t = Tensor::from_parts(vec![d], tv.row(index).to_vec());
        let rg = self.rg(table);
        Ok(self.push(t, Op::Embedding { table, index }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, k) = lv.dims2()?;
        if labels.len() != b {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::Index {
                    what: "class label",
                    index: y,
                    bound: k,
                });
            }
            let row = lv.row(r);
            let lse = super::dense::log_sum_exp(row);
            loss += lse - row[y];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let t = Tensor::scalar(loss / b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != targets.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / n),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    fn backprop(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        if !self.rg(loss) {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Per-parameter gradients of a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let grads = self.backprop(loss)?;
        let mut out = Gradients::new();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(key), Some(g)) = (&node.op, g) {
                out.insert_or_add(*key, g);
            }
        }
        Ok(out)
    }

    /// Accumulates gradients of `loss` into the matching parameters of `set`.
    /// Calling it twice without `zero_grad` sums both contributions.
    pub fn backward(&self, loss: Var, set: &mut ParamSet) -> Result<()> {
        let g = self.gradients(loss)?;
        set.accumulate(&g);
        Ok(())
    }

    /// Gradient of `loss` with respect to any recorded value (zeros when
    /// `wrt` does not influence the loss).
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Tensor> {
        let mut grads = self.backprop(loss)?;
        Ok(grads
            .get_mut(wrt.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(self.shape(wrt))))
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).shape()[1];
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, val(*b).data(), true, &mut da, false);
                    acc(*a, Tensor::from_parts(vec![m, k], da));
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(*a).data(), true, gd, false, &mut db, false);
                    acc(*b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                if wants(*b) {
                    let n = val(*b).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, Tensor::from_parts(val(*b).shape().to_vec(), db));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let d = gd.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
                }
                if wants(*b) {
                    let d = gd.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    acc(*b, Tensor::from_parts(g.shape().to_vec(), d));
                }
            }
            Op::ScaleRows(x, s) => {
                let c = val(*x).shape()[1];
                if wants(*x) {
                    let mut d = gd.to_vec();
                    for (row, f) in d.chunks_mut(c).zip(val(*s).data()) {
                        for v in row {
                            *v *= f;
                        }
                    }
                    acc(*x, Tensor::from_parts(g.shape().to_vec(), d));
                }
                if wants(*s) {
                    let d = gd
                        .chunks(c)
                        .zip(val(*x).data().chunks(c))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*s, Tensor::from_parts(val(*s).shape().to_vec(), d));
                }
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::DivScalar(x, c) => acc(*x, g.map(|v| v / c)),
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Sigmoid(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                acc(*x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Tanh(x) => {
                let d = gd
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                acc(*x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Ln(x) => {
                let d = gd.iter().zip(val(*x).data()).map(|(g, x)| g / x).collect();
                acc(*x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            d[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                acc(*x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = val(*gamma).len();
                let gam = val(*gamma).data();
                if wants(*gamma) || wants(*beta) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for (grow, hrow) in gd.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += grow[j] * hrow[j];
                            db[j] += grow[j];
                        }
                    }
                    acc(*gamma, Tensor::from_parts(val(*gamma).shape().to_vec(), dg));
                    acc(*beta, Tensor::from_parts(val(*beta).shape().to_vec(), db));
                }
                if wants(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    for (r, is) in inv_std.iter().enumerate() {
                        let grow = &gd[r * n..(r + 1) * n];
                        let hrow = &xhat[r * n..(r + 1) * n];
                        let dh: Vec<f64> = grow.iter().zip(gam).map(|(g, w)| g * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhh =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dx[r * n + j] = is * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                    acc(*x, Tensor::from_parts(g.shape().to_vec(), dx));
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let (c_in, l_in) = val(*x).dims2().unwrap();
                let [c_out, _, k] = *val(*w).shape() else { unreachable!() };
                let l_out = g.shape()[1];
                let ck = c_in * k;
                if wants(*b) {
                    let db = gd.chunks(l_out).map(|r| r.iter().sum()).collect();
                    acc(*b, Tensor::from_parts(vec![c_out], db));
                }
                if wants(*w) {
                    let mut dw = vec![0.0; c_out * ck];
                    gemm(c_out, l_out, ck, gd, false, cols, true, &mut dw, false);
                    acc(*w, Tensor::from_parts(val(*w).shape().to_vec(), dw));
                }
                if wants(*x) {
                    let mut dcols = vec![0.0; ck * l_out];
                    gemm(ck, c_out, l_out, val(*w).data(), true, gd, false, &mut dcols, false);
                    let mut dx = vec![0.0; c_in * l_in];
                    for ci in 0..c_in {
                        for kk in 0..k {
                            let src = &dcols[(ci * k + kk) * l_out..(ci * k + kk + 1) * l_out];
                            for (lo, v) in src.iter().enumerate() {
                                let pos = lo * stride + kk;
                                if pos >= *pad && pos - pad < l_in {
                                    dx[ci * l_in + pos - pad] += v;
                                }
                            }
                        }
                    }
                    acc(*x, Tensor::from_parts(vec![c_in, l_in], dx));
                }
            }
            Op::ConvTranspose1d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (c_in, l_in) = val(*x).dims2().unwrap();
                let [_, c_out, k] = *val(*w).shape() else { unreachable!() };
                let l_out = g.shape()[1];
                let ck = c_out * k;
                if wants(*b) {
                    let db = gd.chunks(l_out).map(|r| r.iter().sum()).collect();
                    acc(*b, Tensor::from_parts(vec![c_out], db));
                }
                if wants(*w) || wants(*x) {
                    let mut dcols = vec![0.0; ck * l_in];
                    for co in 0..c_out {
                        for kk in 0..k {
                            let dst = &mut dcols[(co * k + kk) * l_in..(co * k + kk + 1) * l_in];
                            for (l, d) in dst.iter_mut().enumerate() {
                                let pos = l * stride + kk;
                                if pos >= *pad && pos - pad < l_out {
                                    *d = gd[co * l_out + pos - pad];
                                }
                            }
                        }
                    }
                    if wants(*w) {
                        let mut dw = vec![0.0; c_in * ck];
                        gemm(c_in, l_in, ck, val(*x).data(), false, &dcols, true, &mut dw, false);
                        acc(*w, Tensor::from_parts(val(*w).shape().to_vec(), dw));
                    }
                    if wants(*x) {
                        let mut dx = vec![0.0; c_in * l_in];
                        gemm(c_in, ck, l_in, val(*w).data(), false, &dcols, false, &mut dx, false);
                        acc(*x, Tensor::from_parts(vec![c_in, l_in], dx));
                    }
                }
            }
            Op::Mean(x, axis) => {
                let xs = val(*x).shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let mut d = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            d[(o * n + j) * inner + i] = gd[o * inner + i] / n as f64;
                        }
                    }
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), d));
            }
            Op::Max(x, arg) => {
                let xs = val(*x).shape();
                let mut d = vec![0.0; val(*x).len()];
                for (gv, &at) in gd.iter().zip(arg) {
                    d[at] += gv;
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), d));
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), gd[0])),
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = axis_split(g.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = val(v).shape()[*axis];
                    if wants(v) {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&gd[base..base + n * inner]);
                        }
                        acc(v, Tensor::from_parts(val(v).shape().to_vec(), d));
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = val(*x).shape();
                let (outer, n, inner) = axis_split(xs, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![0.0; val(*x).len()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                acc(*x, Tensor::from_parts(xs.to_vec(), d));
            }
            Op::Reshape(x) => acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), gd.to_vec())),
            Op::Transpose(x) => acc(*x, g.transpose2().unwrap()),
            Op::Embedding { table, index } => {
                let tv = val(*table);
                let d = tv.shape()[1];
                let mut dt = vec![0.0; tv.len()];
                dt[index * d..(index + 1) * d].copy_from_slice(gd);
                acc(*table, Tensor::from_parts(tv.shape().to_vec(), dt));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = val(*logits).shape()[1];
                let scale = gd[0] / labels.len() as f64;
                let mut d = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * k + y] -= 1.0;
                }
                for v in &mut d {
                    *v *= scale;
                }
                acc(*logits, Tensor::from_parts(val(*logits).shape().to_vec(), d));
            }
            Op::BceWithLogits { logits, targets } => {
                let scale = gd[0] / targets.len() as f64;
                let d = val(*logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| (stable_sigmoid(x) - y) * scale)
                    .collect();
                acc(*logits, Tensor::from_parts(val(*logits).shape().to_vec(), d));
            }
        }
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
