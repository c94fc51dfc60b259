//! Eager reverse-mode autodiff over a recorded tape.
//!
//! Every op evaluates immediately and appends a node; `backward` walks the
//! nodes in reverse creation order, which is a valid topological order.
//! A graph may run `backward` once. Set `retain_graph` to allow repeated
//! calls (gradients then accumulate), or call `zero_grad` to reset.

use super::ops::{self, Mask, Targets};
use super::tensor::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Exp(Var),
    Log(Var),
    Gelu(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, targets: Targets, probs: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
    /// Permit more than one `backward` call on the same tape.
    pub retain_graph: bool,
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

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.consumed = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shape checked");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    fn row_broadcast(&mut self, name: &'static str, a: Var, row: Var, mul: bool) -> Result<Var> {
        let (r, c) = self.value(a).dims2();
        if self.value(row).numel() != c {
            return Err(Error::shape(
                name,
                format!("row of {} for {r}x{c}", self.value(row).numel()),
            ));
        }
        let rv = self.value(row).data();
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, &y) in chunk.iter_mut().zip(rv) {
                if mul {
                    *x *= y
                } else {
                    *x += y
                }
            }
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, row]);
        let op = if mul {
            Op::MulRow(a, row)
        } else {
            Op::AddRow(a, row)
        };
        Ok(self.push(value, op, rg))
    }

    /// `a + row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, false)
    }

    /// `a ⊙ row` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (n, k2) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMulNT(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn softmax(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let value = ops::softmax_masked(self.value(a), mask)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = ops::log_softmax(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let va = self.value(a);
        let (r, c) = va.dims2();
        let mut out = va.data().to_vec();
        let mut rstd = Vec::with_capacity(r);
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            rstd.push(s);
        }
        let value = Tensor::new(va.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::LayerNorm { x: a, rstd }, rg)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.dims2();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= r {
                return Err(Error::shape("gather", format!("row {i} of {r}")));
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(ids.len(), c, out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let (r, c) = va.dims2();
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&va.row(i)[start..start + len]);
        }
        let value = Tensor::matrix(r, len, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols { x: a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(r, total, out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor::scalar(v.sum() / v.numel() as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Mean cross-entropy of `softmax(logits)` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Targets) -> Result<Var> {
        let lv = self.value(logits);
        let (r, c) = lv.dims2();
        targets.validate(r, c)?;
        let loss = ops::cross_entropy(lv, &targets)?;
        let probs = ops::softmax(lv)?;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            rg,
        ))
    }

    fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, g: Tensor) {
        if !nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Populates gradients of every differentiable node with respect to `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed && !self.retain_graph {
            return Err(Error::GraphConsumed);
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        // seed; accumulate on top of earlier passes when the tape is retained
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(&loss_shape, 1.0));
        let nodes = &self.nodes;

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gout);
                    continue;
                }
                Op::Add(a, b) => {
                    Self::accumulate(&mut grads, nodes, *a, gout.clone());
                    Self::accumulate(&mut grads, nodes, *b, gout);
                }
                Op::Sub(a, b) => {
                    Self::accumulate(&mut grads, nodes, *b, gout.map(|x| -x));
                    Self::accumulate(&mut grads, nodes, *a, gout);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let ga = zip(&gout, vb, |g, y| g * y);
                    let gb = zip(&gout, va, |g, x| g * x);
                    Self::accumulate(&mut grads, nodes, *a, ga);
                    Self::accumulate(&mut grads, nodes, *b, gb);
                }
                Op::Scale(a, s) => {
                    Self::accumulate(&mut grads, nodes, *a, gout.map(|g| g * s));
                }
                Op::AddRow(a, row) => {
                    let c = gout.cols();
                    let mut gr = vec![0.0; c];
                    for chunk in gout.data().chunks(c) {
                        for (acc, g) in gr.iter_mut().zip(chunk) {
                            *acc += g;
                        }
                    }
                    let rshape = nodes[row.0].value.shape().to_vec();
                    Self::accumulate(&mut grads, nodes, *row, Tensor::new(rshape, gr)?);
                    Self::accumulate(&mut grads, nodes, *a, gout);
                }
                Op::MulRow(a, row) => {
                    let va = &nodes[a.0].value;
                    let rv = nodes[row.0].value.data();
                    let c = gout.cols();
                    let mut gr = vec![0.0; c];
                    let mut ga = gout.data().to_vec();
                    for (i, chunk) in ga.chunks_mut(c).enumerate() {
                        let xrow = va.row(i);
                        for j in 0..c {
                            gr[j] += chunk[j] * xrow[j];
                            chunk[j] *= rv[j];
                        }
                    }
                    let rshape = nodes[row.0].value.shape().to_vec();
                    Self::accumulate(&mut grads, nodes, *row, Tensor::new(rshape, gr)?);
                    Self::accumulate(&mut grads, nodes, *a, Tensor::new(va.shape().to_vec(), ga)?);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = va.dims2();
                    let n = vb.cols();
                    if nodes[a.0].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt(gout.data(), vb.data(), &mut ga, m, n, k);
                        Self::accumulate(&mut grads, nodes, *a, Tensor::new(va.shape().to_vec(), ga)?);
                    }
                    if nodes[b.0].requires_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm_tn(va.data(), gout.data(), &mut gb, k, m, n);
                        Self::accumulate(&mut grads, nodes, *b, Tensor::new(vb.shape().to_vec(), gb)?);
                    }
                }
                Op::MatMulNT(a, b) => {
                    // out = a bᵀ ; da = gout · b ; db = goutᵀ · a
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k) = va.dims2();
                    let n = vb.rows();
                    if nodes[a.0].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm_nn(gout.data(), vb.data(), &mut ga, m, n, k);
                        Self::accumulate(&mut grads, nodes, *a, Tensor::new(va.shape().to_vec(), ga)?);
                    }
                    if nodes[b.0].requires_grad {
                        let mut gb = vec![0.0; n * k];
                        gemm_tn(gout.data(), va.data(), &mut gb, n, m, k);
                        Self::accumulate(&mut grads, nodes, *b, Tensor::new(vb.shape().to_vec(), gb)?);
                    }
                }
                Op::Transpose(a) => {
                    let g = gout.transpose();
                    let shape = nodes[a.0].value.shape().to_vec();
                    Self::accumulate(&mut grads, nodes, *a, g.reshape(shape)?);
                }
                Op::Softmax(a) => {
                    let c = out.cols();
                    let mut g = vec![0.0; out.numel()];
                    for (i, gi) in g.chunks_mut(c).enumerate() {
                        let y = out.row(i);
                        let dy = gout.row(i);
                        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gi[j] = y[j] * (dy[j] - dot);
                        }
                    }
                    Self::accumulate(&mut grads, nodes, *a, Tensor::new(out.shape().to_vec(), g)?);
                }
                Op::LogSoftmax(a) => {
                    let c = out.cols();
                    let mut g = vec![0.0; out.numel()];
                    for (i, gi) in g.chunks_mut(c).enumerate() {
                        let y = out.row(i);
                        let dy = gout.row(i);
                        let total: f64 = dy.iter().sum();
                        for j in 0..c {
                            gi[j] = dy[j] - y[j].exp() * total;
                        }
                    }
                    Self::accumulate(&mut grads, nodes, *a, Tensor::new(out.shape().to_vec(), g)?);
                }
                Op::Exp(a) => {
                    Self::accumulate(&mut grads, nodes, *a, zip(&gout, out, |g, y| g * y));
                }
                Op::Log(a) => {
                    let va = &nodes[a.0].value;
                    Self::accumulate(&mut grads, nodes, *a, zip(&gout, va, |g, x| g / x));
                }
                Op::Gelu(a) => {
                    let va = &nodes[a.0].value;
                    Self::accumulate(&mut grads, nodes, *a, zip(&gout, va, |g, x| g * gelu_grad(x)));
                }
                Op::LayerNorm { x, rstd } => {
                    let c = out.cols();
                    let mut g = vec![0.0; out.numel()];
                    for (i, gi) in g.chunks_mut(c).enumerate() {
                        let y = out.row(i);
                        let dy = gout.row(i);
                        let mean_dy = dy.iter().sum::<f64>() / c as f64;
                        let mean_dyy = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gi[j] = rstd[i] * (dy[j] - mean_dy - y[j] * mean_dyy);
                        }
                    }
                    let shape = nodes[x.0].value.shape().to_vec();
                    Self::accumulate(&mut grads, nodes, *x, Tensor::new(shape, g)?);
                }
                Op::Gather { table, ids } => {
                    let t = &nodes[table.0].value;
                    let c = t.cols();
                    let mut g = vec![0.0; t.numel()];
                    for (k, &i) in ids.iter().enumerate() {
                        for (acc, v) in g[i * c..(i + 1) * c].iter_mut().zip(gout.row(k)) {
                            *acc += v;
                        }
                    }
                    Self::accumulate(&mut grads, nodes, *table, Tensor::new(t.shape().to_vec(), g)?);
                }
                Op::SliceCols { x, start } => {
                    let vx = &nodes[x.0].value;
                    let c = vx.cols();
                    let len = gout.cols();
                    let mut g = vec![0.0; vx.numel()];
                    for i in 0..gout.rows() {
                        g[i * c + start..i * c + start + len].copy_from_slice(gout.row(i));
                    }
                    Self::accumulate(&mut grads, nodes, *x, Tensor::new(vx.shape().to_vec(), g)?);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let vp = &nodes[p.0].value;
                        let (r, c) = vp.dims2();
                        let mut g = Vec::with_capacity(r * c);
                        for i in 0..r {
                            g.extend_from_slice(&gout.row(i)[off..off + c]);
                        }
                        off += c;
                        Self::accumulate(&mut grads, nodes, *p, Tensor::new(vp.shape().to_vec(), g)?);
                    }
                }
                Op::Sum(a) => {
                    let shape = nodes[a.0].value.shape();
                    Self::accumulate(&mut grads, nodes, *a, Tensor::full(shape, gout.item()));
                }
                Op::Mean(a) => {
                    let va = &nodes[a.0].value;
                    let g = gout.item() / va.numel() as f64;
                    Self::accumulate(&mut grads, nodes, *a, Tensor::full(va.shape(), g));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let (r, c) = probs.dims2();
                    let n = targets.active_rows(r);
                    let scale = if n == 0 { 0.0 } else { gout.item() / n as f64 };
                    let mut g = probs.data().to_vec();
                    match targets {
                        Targets::Index(ids) => {
                            for (i, t) in ids.iter().enumerate() {
                                let row = &mut g[i * c..(i + 1) * c];
                                match t {
                                    Some(t) => row[*t] -= 1.0,
                                    None => row.iter_mut().for_each(|v| *v = 0.0),
                                }
                            }
                        }
                        Targets::Dist(t) => {
                            for (gv, tv) in g.iter_mut().zip(t.data()) {
                                *gv -= tv;
                            }
                        }
                    }
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                    let shape = nodes[logits.0].value.shape().to_vec();
                    Self::accumulate(&mut grads, nodes, *logits, Tensor::new(shape, g)?);
                }
            }
        }

        for (slot, g) in self.grads.iter_mut().zip(grads) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        // leaves that never received a gradient still get an explicit zero
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.consumed = true;
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("same shape")
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::scalar(4.0));
        let loss = g.scale(c, 2.0);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_rejected_unless_retained() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(Error::GraphConsumed)));

        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 4.0);

        g.retain_graph = true;
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 8.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }
}
