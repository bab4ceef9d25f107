use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{contract, Error, Result};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a trainable parameter across graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A trainable tensor owned by a layer.
#[derive(Clone, Debug)]
pub struct Param {
    id: ParamId,
    pub value: Tensor,
}

fn fresh_id() -> ParamId {
    ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self { id: fresh_id(), value }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Softmax(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    BatchMean(Var),
    BatchVar(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Clamp { x: Var, lo: f64, hi: f64 },
    ClampBox { x: Var, lower: Vec<f64>, upper: Vec<f64> },
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
    Pick(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Conv1d { x, w, b, .. } | Op::ConvTranspose1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } | Op::ChannelAffine { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Affine(x, _)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Log(x)
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::BatchMean(x)
            | Op::BatchVar(x)
            | Op::Sum(x)
            | Op::WeightedSum(x, _)
            | Op::Pick(x, _) => vec![*x],
            Op::Clamp { x, .. } | Op::ClampBox { x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Tracked leaf that is not a [`Param`]; its gradient is read with [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Enter a parameter. With `trainable == false` it is a frozen constant and
    /// collects no gradient.
    pub fn param(&mut self, p: &Param, trainable: bool) -> Var {
        let v = self.leaf(p.value.clone(), trainable);
        if trainable {
            self.params.push((p.id(), v));
        }
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect()).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let v = self.map(x, |t| scale * t + shift);
        self.push("affine", v, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    /// `x[b, ...] + bias[...]` for every leading index `b`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() < 2 || sx[1..] != *sb {
            return Err(dim_err("add_bias", sx, sb));
        }
        let bias_data = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(bias_data.len()) {
            for (o, b) in row.iter_mut().zip(&bias_data) {
                *o += b;
            }
        }
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    fn conv_dims(&self, op: &'static str, x: Var, w: Var, stride: usize, pad: usize, transpose: bool) -> Result<ConvDims> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || stride == 0 {
            return Err(dim_err(op, sx, sw));
        }
        if !transpose {
            // x [B, in, L], w [out, in, k]
            if sx[1] != sw[1] {
                return Err(dim_err(op, sx, sw));
            }
            let out_len = kernels::conv_out_len(sx[2], sw[2], stride, pad).ok_or_else(|| dim_err(op, sx, sw))?;
            Ok(ConvDims {
                batch: sx[0],
                c_in: sx[1],
                len: sx[2],
                c_out: sw[0],
                k: sw[2],
                stride,
                pad,
                out_len,
            })
        } else {
            // x [B, in_t, L_t], w [in_t, out_t, k]; the underlying conv maps out_t -> in_t.
            if sx[1] != sw[0] || sx[2] == 0 {
                return Err(dim_err(op, sx, sw));
            }
            let full = (sx[2] - 1) * stride + sw[2];
            if full <= 2 * pad {
                return Err(dim_err(op, sx, sw));
            }
            let len = full - 2 * pad;
            debug_assert_eq!(kernels::conv_out_len(len, sw[2], stride, pad), Some(sx[2]));
            Ok(ConvDims {
                batch: sx[0],
                c_in: sw[1],
                len,
                c_out: sw[0],
                k: sw[2],
                stride,
                pad,
                out_len: sx[2],
            })
        }
    }

    fn add_channel_bias(data: &mut [f64], bias: &[f64], batch: usize, len: usize) {
        let channels = bias.len();
        for b in 0..batch {
            for (c, bv) in bias.iter().enumerate() {
                for v in &mut data[(b * channels + c) * len..][..len] {
                    *v += bv;
                }
            }
        }
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [channels] {
                return Err(dim_err(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    /// 1-D convolution, `x [B, in, L]`, `w [out, in, k]`, optional `bias [out]`,
    /// symmetric zero padding.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let d = self.conv_dims("conv1d", x, w, stride, pad, false)?;
        self.check_bias("conv1d", bias, d.c_out)?;
        let mut data = kernels::conv_forward(self.value(x).data(), self.value(w).data(), &d);
        if let Some(b) = bias {
            Self::add_channel_bias(&mut data, self.value(b).data(), d.batch, d.out_len);
        }
        let out = Tensor::new(vec![d.batch, d.c_out, d.out_len], data)?;
        self.push("conv1d", out, Op::Conv1d { x, w, b: bias, stride, pad })
    }

    /// Transposed 1-D convolution: the input-adjoint of [`Graph::conv1d`].
    /// `x [B, in, L]`, `w [in, out, k]`, output length `(L-1)*stride + k - 2*pad`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let d = self.conv_dims("conv_transpose1d", x, w, stride, pad, true)?;
        self.check_bias("conv_transpose1d", bias, d.c_in)?;
        let mut data = kernels::conv_backward_input(self.value(x).data(), self.value(w).data(), &d);
        if let Some(b) = bias {
            Self::add_channel_bias(&mut data, self.value(b).data(), d.batch, d.len);
        }
        let out = Tensor::new(vec![d.batch, d.c_in, d.len], data)?;
        self.push("conv_transpose1d", out, Op::ConvTranspose1d { x, w, b: bias, stride, pad })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let v = self.map(x, |t| if t > 0.0 { t } else { slope * t });
        self.push("leaky_relu", v, Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, f64::tanh);
        self.push("tanh", v, Op::Tanh(x))
    }

    /// Natural log; non-positive inputs are a numeric error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, f64::ln);
        self.push("log", v, Op::Log(x))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let width = *t.shape().last().ok_or_else(|| dim_err("softmax", t.shape(), &[]))?;
        if width == 0 {
            return Err(dim_err("softmax", t.shape(), &[]));
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax", out, Op::Softmax(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| contract("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err("concat", &base, &[axis]));
        }
        let mut total_axis = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(dim_err("concat", &base, s));
            }
            total_axis += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        let out = Tensor::new(shape, data)?;
        self.push(
            "concat",
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    fn batch_split(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.is_empty() || s[0] == 0 {
            return Err(dim_err(op, s, &[]));
        }
        Ok((s[0], self.value(x).len() / s[0]))
    }

    /// Mean over the leading dimension: `[B, ...] -> [...]`.
    pub fn batch_mean(&mut self, x: Var) -> Result<Var> {
        let (batch, width) = self.batch_split("batch_mean", x)?;
        let t = self.value(x);
        let mut mean = vec![0.0; width];
        for row in t.data().chunks(width) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= batch as f64);
        let shape = if t.shape().len() > 1 { t.shape()[1..].to_vec() } else { vec![1] };
        let out = Tensor::new(shape, mean)?;
        self.push("batch_mean", out, Op::BatchMean(x))
    }

    /// Biased variance over the leading dimension: `[B, ...] -> [...]`.
    pub fn batch_var(&mut self, x: Var) -> Result<Var> {
        let (batch, width) = self.batch_split("batch_var", x)?;
        let t = self.value(x);
        let mean = column_means(t.data(), batch, width);
        let mut var = vec![0.0; width];
        for row in t.data().chunks(width) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= batch as f64);
        let shape = if t.shape().len() > 1 { t.shape()[1..].to_vec() } else { vec![1] };
        let out = Tensor::new(shape, var)?;
        self.push("batch_var", out, Op::BatchVar(x))
    }

    fn bn_dims(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(dim_err(op, s, &[]));
        }
        let (batch, channels) = (s[0], s[1]);
        let len: usize = s[2..].iter().product();
        for p in [gamma, beta] {
            if self.shape(p) != [channels] {
                return Err(dim_err(op, self.shape(p), &[channels]));
            }
        }
        Ok((batch, channels, len))
    }

    /// Training-mode batch normalisation over `[B, C, ...]`, statistics per
    /// channel across batch and trailing positions (biased variance).
    /// Returns the output and the per-channel batch mean and biased variance.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (batch, channels, len) = self.bn_dims("batch_norm", x, gamma, beta)?;
        if batch < 2 {
            return Err(contract("batch normalisation in train mode needs a batch of at least 2"));
        }
        let count = (batch * len) as f64;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for b in 0..batch {
            for c in 0..channels {
                mean[c] += xd[(b * channels + c) * len..][..len].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..batch {
            for c in 0..channels {
                var[c] += xd[(b * channels + c) * len..][..len]
                    .iter()
                    .map(|v| (v - mean[c]) * (v - mean[c]))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize(x, gamma, beta, &mean, &inv_std, batch, channels, len);
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let v = self.push(
            "batch_norm",
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )?;
        Ok((v, mean, var))
    }

    /// Eval-mode batch normalisation with fixed statistics.
    pub fn batch_norm_fixed(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (batch, channels, len) = self.bn_dims("batch_norm_fixed", x, gamma, beta)?;
        if mean.len() != channels || var.len() != channels {
            return Err(dim_err("batch_norm_fixed", &[channels], &[mean.len(), var.len()]));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize(x, gamma, beta, mean, &inv_std, batch, channels, len);
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(
            "batch_norm_fixed",
            out,
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        batch: usize,
        channels: usize,
        len: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * len;
                for t in 0..len {
                    let h = (xd[off + t] - mean[c]) * inv_std[c];
                    xhat[off + t] = h;
                    out[off + t] = g[c] * h + bt[c];
                }
            }
        }
        (xhat, out)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes inside, zero outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(contract(format!("clamp bounds reversed: {lo} > {hi}")));
        }
        let v = self.map(x, |t| t.clamp(lo, hi));
        self.push("clamp", v, Op::Clamp { x, lo, hi })
    }

    /// Per-column clamp of `x [B, d]` into the box `[lower, upper]` (each length `d`).
    pub fn clamp_box(&mut self, x: Var, lower: &[f64], upper: &[f64]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[1] != lower.len() || s[1] != upper.len() {
            return Err(dim_err("clamp_box", s, &[lower.len(), upper.len()]));
        }
        let width = s[1];
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(width) {
            for ((v, lo), hi) in row.iter_mut().zip(lower).zip(upper) {
                *v = v.clamp(*lo, *hi);
            }
        }
        self.push(
            "clamp_box",
            out,
            Op::ClampBox {
                x,
                lower: lower.to_vec(),
                upper: upper.to_vec(),
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(contract("mean of empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `sum_i w[i] * x[i]` over all elements.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.len() != weights.len() {
            return Err(dim_err("weighted_sum", t.shape(), &[weights.len()]));
        }
        let total = t.data().iter().zip(weights).map(|(a, b)| a * b).sum();
        self.push("weighted_sum", Tensor::scalar(total), Op::WeightedSum(x, weights.to_vec()))
    }

    /// `x [B, N] -> [B]` selecting column `index[b]` from each row.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != index.len() {
            return Err(dim_err("pick", s, &[index.len()]));
        }
        let width = s[1];
        if let Some(bad) = index.iter().find(|&&i| i >= width) {
            return Err(contract(format!("pick index {bad} out of range for width {width}")));
        }
        let t = self.value(x);
        let data = index.iter().enumerate().map(|(b, &i)| t.data()[b * width + i]).collect();
        self.push("pick", Tensor::from_vec(data), Op::Pick(x, index.to_vec()))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(contract(format!("backward needs a scalar loss, got shape {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut by_param: HashMap<ParamId, Vec<f64>> = HashMap::new();
        for (id, v) in &self.params {
            let g = grads[v.0].clone().unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
            match by_param.get_mut(id) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    by_param.insert(*id, g);
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            per_node: grads,
            shapes,
            by_param,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot => *slot = Some(contrib),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(x, y)| x * y).collect());
                }
            }
            Op::Affine(x, s) => self.accumulate(grads, *x, g.iter().map(|v| v * s).collect()),
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.wants(*b) {
                    let width = self.value(*b).len();
                    let mut gb = vec![0.0; width];
                    for row in g.chunks(width) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let ga = kernels::matmul_rhs_t(g, self.value(*b).data(), m, k, n);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = kernels::matmul_lhs_t(self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let d = self.conv_dims("conv1d", *x, *w, *stride, *pad, false).expect("validated in forward");
                if self.wants(*x) {
                    let gx = kernels::conv_backward_input(g, self.value(*w).data(), &d);
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let gw = kernels::conv_backward_weight(self.value(*x).data(), g, &d);
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        self.accumulate(grads, *b, kernels::channel_sums(g, d.batch, d.c_out, d.out_len));
                    }
                }
            }
            Op::ConvTranspose1d { x, w, b, stride, pad } => {
                let d = self
                    .conv_dims("conv_transpose1d", *x, *w, *stride, *pad, true)
                    .expect("validated in forward");
                if self.wants(*x) {
                    let gx = kernels::conv_forward(g, self.value(*w).data(), &d);
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*w) {
                    let gw = kernels::conv_backward_weight(g, self.value(*x).data(), &d);
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        self.accumulate(grads, *b, kernels::channel_sums(g, d.batch, d.c_in, d.len));
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                let vx = self.value(*x).data();
                let gx = g.iter().zip(vx).map(|(gv, xv)| if *xv > 0.0 { *gv } else { slope * gv }).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g.iter().zip(out).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = g.iter().zip(out).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Log(x) => {
                let vx = self.value(*x).data();
                let gx = g.iter().zip(vx).map(|(gv, xv)| gv / xv).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let width = *node.value.shape().last().expect("non-empty shape");
                let mut gx = vec![0.0; g.len()];
                for ((gr, sr), xr) in g.chunks(width).zip(out.chunks(width)).zip(gx.chunks_mut(width)) {
                    let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                    for ((o, gv), s) in xr.iter_mut().zip(gr).zip(sr) {
                        *o = s * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Concat { inputs, axis } => {
                let base = node.value.shape();
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total = base[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let chunk = self.shape(*v)[*axis] * inner;
                    if self.wants(*v) {
                        let mut gv = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            gv.extend_from_slice(&g[o * total + offset..][..chunk]);
                        }
                        self.accumulate(grads, *v, gv);
                    }
                    offset += chunk;
                }
            }
            Op::BatchMean(x) => {
                let batch = self.shape(*x)[0];
                let gx: Vec<f64> = (0..batch).flat_map(|_| g.iter().map(|v| v / batch as f64)).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::BatchVar(x) => {
                let batch = self.shape(*x)[0];
                let xd = self.value(*x).data();
                let width = g.len();
                let mean = column_means(xd, batch, width);
                let gx = xd
                    .chunks(width)
                    .flat_map(|row| {
                        row.iter()
                            .zip(&mean)
                            .zip(g)
                            .map(|((v, m), gv)| 2.0 * (v - m) / batch as f64 * gv)
                            .collect::<Vec<_>>()
                    })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = self.shape(*x);
                let (batch, channels) = (s[0], s[1]);
                let len: usize = s[2..].iter().product();
                let gamma_v = self.value(*gamma).data();
                let (dgamma, dbeta) = bn_affine_grads(g, xhat, batch, channels, len);
                if self.wants(*x) {
                    let count = (batch * len) as f64;
                    let mut gx = vec![0.0; g.len()];
                    for c in 0..channels {
                        let k = gamma_v[c] * inv_std[c] / count;
                        for b in 0..batch {
                            let off = (b * channels + c) * len;
                            for t in 0..len {
                                gx[off + t] = k * (count * g[off + t] - dbeta[c] - xhat[off + t] * dgamma[c]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::ChannelAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = self.shape(*x);
                let (batch, channels) = (s[0], s[1]);
                let len: usize = s[2..].iter().product();
                let gamma_v = self.value(*gamma).data();
                let (dgamma, dbeta) = bn_affine_grads(g, xhat, batch, channels, len);
                if self.wants(*x) {
                    let mut gx = vec![0.0; g.len()];
                    for b in 0..batch {
                        for c in 0..channels {
                            let off = (b * channels + c) * len;
                            for t in 0..len {
                                gx[off + t] = g[off + t] * gamma_v[c] * inv_std[c];
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x).data();
                let gx = g
                    .iter()
                    .zip(vx)
                    .map(|(gv, xv)| if xv >= lo && xv <= hi { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::ClampBox { x, lower, upper } => {
                let vx = self.value(*x).data();
                let width = lower.len();
                let mut gx = vec![0.0; g.len()];
                for (idx, (o, (gv, xv))) in gx.iter_mut().zip(g.iter().zip(vx)).enumerate() {
                    let c = idx % width;
                    if *xv >= lower[c] && *xv <= upper[c] {
                        *o = *gv;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::WeightedSum(x, w) => {
                self.accumulate(grads, *x, w.iter().map(|wv| wv * g[0]).collect());
            }
            Op::Pick(x, index) => {
                let width = self.shape(*x)[1];
                let mut gx = vec![0.0; self.value(*x).len()];
                for (b, &c) in index.iter().enumerate() {
                    gx[b * width + c] += g[b];
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }
}

fn column_means(data: &[f64], batch: usize, width: usize) -> Vec<f64> {
    let mut mean = vec![0.0; width];
    for row in data.chunks(width) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= batch as f64);
    mean
}

fn bn_affine_grads(g: &[f64], xhat: &[f64], batch: usize, channels: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * len;
            for t in 0..len {
                dgamma[c] += g[off + t] * xhat[off + t];
                dbeta[c] += g[off + t];
            }
        }
    }
    (dgamma, dbeta)
}

/// Result of a backward sweep.
pub struct Gradients {
    per_node: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    by_param: HashMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a tracked node; `None` if the node is not
    /// tracked or the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        self.per_node[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient matches node shape"))
    }

    /// Gradient of a trainable parameter summed over all its uses in the graph.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn has_param(&self, id: ParamId) -> bool {
        self.by_param.contains_key(&id)
    }
}
