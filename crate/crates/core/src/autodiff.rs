//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is the tape. Every operation evaluates eagerly, appends a node
//! holding its value and the information its gradient rule needs, and returns
//! a [`Var`] handle. Nodes are appended in evaluation order, so the tape is
//! topologically sorted by construction and [`Graph::backward`] is a single
//! reverse sweep.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    Sum(Var),
    Reshape(Var),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape: an append-only list of evaluated operations.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[var.0], g.clone()).expect("gradient matches node shape"))
    }

    /// Gradient of `var`, zero-filled for nodes the loss does not reach.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.get(var).unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} produced or received a non-finite value")))
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.last_dim())
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
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

    /// Drop every recorded node. Outstanding [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Record a leaf whose gradient will be tracked.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        check_finite(&value, "leaf")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite(&value, "constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            bail!(Shape, "add: {:?} vs {:?}", va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape(), data)?;
        check_finite(&out, "add")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Add a vector to every row of `x` along its last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.last_dim();
        if vb.len() != n {
            bail!(Shape, "add_bias: bias of {} values for last axis {}", vb.len(), n);
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(vx.shape(), data)?;
        check_finite(&out, "add_bias")?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            bail!(Shape, "mul: {:?} vs {:?}", va.shape(), vb.shape());
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        check_finite(&out, "mul")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        check_finite(&out, "scale")?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Scale(a, factor), rg))
    }

    /// Matrix product `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            bail!(Shape, "matmul: {:?} · {:?}", va.shape(), vb.shape());
        }
        check_finite(va, "matmul")?;
        check_finite(vb, "matmul")?;
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = vec![0.0; m * n];
        gemm_nn(va.data(), vb.data(), &mut data, m, k, n);
        let out = Tensor::new(&[m, n], data)?;
        check_finite(&out, "matmul")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Matrix product with the second operand transposed: `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[1] {
            bail!(Shape, "matmul_nt: {:?} · {:?}ᵀ", va.shape(), vb.shape());
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
        let mut data = vec![0.0; m * n];
        gemm_nt(va.data(), vb.data(), &mut data, m, k, n);
        let out = Tensor::new(&[m, n], data)?;
        check_finite(&out, "matmul_nt")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    /// Affine map `x · wᵀ + b` with `w` stored as `[out × in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 {
            bail!(Shape, "transpose needs a matrix, got {:?}", va.shape());
        }
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = va.data()[i * n + j];
            }
        }
        let out = Tensor::new(&[n, m], data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        check_finite(vx, "softmax")?;
        let (_, n) = as_matrix(vx);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - max);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(vx.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        check_finite(vx, "log_softmax")?;
        let (_, n) = as_matrix(vx);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(vx.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSoftmax(x), rg))
    }

    /// Normalise each last-axis slice to zero mean and unit population
    /// variance, then apply `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let (_, d) = as_matrix(vx);
        if vg.len() != d || vb.len() != d {
            bail!(Shape, "layer_norm: gamma/beta of {}/{} values for width {}", vg.len(), vb.len(), d);
        }
        if !(eps > 0.0) {
            bail!(Contract, "layer_norm: eps must be positive");
        }
        check_finite(vx, "layer_norm")?;
        let mut xhat = vx.data().to_vec();
        let mut inv_std = Vec::with_capacity(xhat.len() / d);
        let mut data = vec![0.0; xhat.len()];
        for (row, out) in xhat.chunks_mut(d).zip(data.chunks_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std.push(is);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * is;
                out[j] = *v * vg.data()[j] + vb.data()[j];
            }
        }
        let out = Tensor::new(vx.shape(), data)?;
        check_finite(&out, "layer_norm")?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg))
    }

    /// Exact GELU, `x · Φ(x)` with Φ the standard normal CDF.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        check_finite(vx, "gelu")?;
        let out = vx.map(|v| v * std_normal_cdf(v));
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Gelu(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        check_finite(&out, "relu")?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        let out = Tensor::scalar(s);
        check_finite(&out, "sum")?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = as_matrix(vx);
        if vx.rank() != 2 || len == 0 || start + len > m {
            bail!(Shape, "slice_rows {}..{} of {:?}", start, start + len, vx.shape());
        }
        let out = Tensor::new(&[len, n], vx.data()[start * n..(start + len) * n].to_vec())?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = as_matrix(vx);
        if vx.rank() != 2 || len == 0 || start + len > n {
            bail!(Shape, "slice_cols {}..{} of {:?}", start, start + len, vx.shape());
        }
        let mut data = Vec::with_capacity(m * len);
        for row in vx.data().chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(&[m, len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else { bail!(Shape, "concat_rows of nothing") };
        let n = self.value(first).last_dim();
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.last_dim() != n {
                bail!(Shape, "concat_rows: {:?} does not have {} columns", v.shape(), n);
            }
            m += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(&[m, n], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Place matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else { bail!(Shape, "concat_cols of nothing") };
        let m = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.shape()[0] != m {
                bail!(Shape, "concat_cols: {:?} does not have {} rows", v.shape(), m);
            }
            widths.push(v.shape()[1]);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    ///
    /// Returns gradients for every node that requires one and is reached
    /// from `loss`. The tape is left intact; call [`Graph::reset`] to reuse it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", lv.shape());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        // Add `delta` into the gradient slot of `v` when `v` tracks gradients.
        let mut acc = |v: Var, delta: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            delta(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::AddBias(x, b) => {
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                let n = nodes[b.0].value.len();
                acc(*b, &|s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g * f)),
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                acc(*a, &|s| gemm_nt(g, vb.data(), s, m, n, k));
                acc(*b, &|s| gemm_tn(va.data(), g, s, k, m, n));
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
                // C = A·Bᵀ: dA = dC · B, dB = dCᵀ · A
                acc(*a, &|s| gemm_nn(g, vb.data(), s, m, n, k));
                acc(*b, &|s| gemm_tn(g, va.data(), s, n, m, k));
            }
            Op::Transpose(a) => {
                let va = &nodes[a.0].value;
                let (m, n) = (va.shape()[0], va.shape()[1]);
                acc(*a, &|s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                acc(*x, &|s| {
                    for ((s, y), g) in s.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            s[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                acc(*x, &|s| {
                    for ((s, y), g) in s.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let total: f64 = g.iter().sum();
                        for j in 0..n {
                            s[j] += g[j] - libm::exp(y[j]) * total;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = node.value.last_dim();
                let gm = nodes[gamma.0].value.data();
                acc(*x, &|s| {
                    for (r, ((s, xh), g)) in
                        s.chunks_mut(d).zip(xhat.chunks(d)).zip(g.chunks(d)).enumerate()
                    {
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = g[j] * gm[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for j in 0..d {
                            let dxh = g[j] * gm[j];
                            s[j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
                acc(*gamma, &|s| {
                    for (xh, g) in xhat.chunks(d).zip(g.chunks(d)) {
                        for j in 0..d {
                            s[j] += g[j] * xh[j];
                        }
                    }
                });
                acc(*beta, &|s| {
                    for row in g.chunks(d) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::Gelu(x) => {
                let vx = nodes[x.0].value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        let v = vx[i];
                        s[i] += g[i] * (std_normal_cdf(v) + v * std_normal_pdf(v));
                    }
                });
            }
            Op::Relu(x) => {
                let vx = nodes[x.0].value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        if vx[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Reshape(x) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g)),
            Op::SliceRows { x, start } => {
                let n = node.value.last_dim();
                let off = start * n;
                acc(*x, &|s| {
                    s[off..off + g.len()].iter_mut().zip(g).for_each(|(s, g)| *s += g)
                });
            }
            Op::SliceCols { x, start } => {
                let len = node.value.last_dim();
                let n = nodes[x.0].value.last_dim();
                acc(*x, &|s| {
                    for (srow, grow) in s.chunks_mut(n).zip(g.chunks(len)) {
                        srow[*start..start + len].iter_mut().zip(grow).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    let gp = &g[off..off + len];
                    acc(p, &|s| s.iter_mut().zip(gp).for_each(|(s, g)| *s += g));
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.last_dim();
                let mut col = 0;
                for &p in parts {
                    let w = nodes[p.0].value.last_dim();
                    acc(p, &|s| {
                        for (srow, grow) in s.chunks_mut(w).zip(g.chunks(n)) {
                            srow.iter_mut().zip(&grow[col..col + w]).for_each(|(s, g)| *s += g);
                        }
                    });
                    col += w;
                }
            }
        }
    }
}

/// Compare reverse-mode gradients of a scalar function against central
/// differences `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h`.
///
/// Returns the worst relative error over all coordinates of all inputs, with
/// denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(f, inputs, h, Stencil::Central)
}

/// Finite-difference formula used by [`grad_check_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error O(h²).
    Central,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, error O(h⁴).
    /// Needed for deep graphs where some coordinates have gradients many
    /// orders of magnitude below the largest one.
    FivePoint,
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], h: f64, stencil: Stencil) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0 && h <= 1e-2) {
        bail!(Contract, "grad_check step must lie in (0, 1e-2], got {h}");
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = xs.iter().map(|x| g.constant(x.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars = inputs.iter().map(|x| g.param(x.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            let mut at = |d: f64| -> Result<f64> {
                work[i].data_mut()[j] = orig + d;
                let v = eval(&work);
                work[i].data_mut()[j] = orig;
                v
            };
            let numeric = match stencil {
                Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
            };
            let a = analytic.data()[j];
            let denom = libm::fabs(a).max(libm::fabs(numeric)).max(1e-12);
            worst = worst.max(libm::fabs(a - numeric) / denom);
        }
    }
    Ok(worst)
}
