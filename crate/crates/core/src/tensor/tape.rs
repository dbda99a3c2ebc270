use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this module.
///
/// `backward` receives the forward inputs, the forward output and the
/// gradient flowing into the output, and returns one gradient per input
/// (`None` where `needs[i]` is false or the input has no influence).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SoftmaxCrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `var` (if any) into `tensor.grad`.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

/// Dynamic computation tape. Operations are appended in evaluation order, so
/// inputs always precede their consumers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let value = Tensor {
            requires_grad,
            grad: None,
            ..value
        };
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a copy of `t`; it takes part in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = Tensor::new(t.shape.clone(), t.data.clone()).expect("valid tensor");
        self.push(value, t.requires_grad, Op::Leaf)
    }

    /// Records `t` without copying, taking ownership.
    pub fn leaf_owned(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t, rg, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "matmul")?;
        let (n2, p) = self.dims2(b, "matmul")?;
        if n != n2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * p];
        matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, m, n, p);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, p], out)?, rg, Op::Matmul(a, b)))
    }

    fn broadcast_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape == sb.shape || sb.numel() == 1 {
            Ok(sa.shape.clone())
        } else if sa.numel() == 1 {
            Ok(sb.shape.clone())
        } else {
            Err(Error::shape(op, &sa.shape, &sb.shape))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n = da.len().max(db.len());
        (0..n)
            .map(|i| {
                let x = if da.len() == 1 { da[0] } else { da[i] };
                let y = if db.len() == 1 { db[0] } else { db[i] };
                f(x, y)
            })
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, "add")?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, "mul")?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Mul(a, b)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let out = Tensor::new(src.shape.clone(), src.data.iter().map(|&x| f(x)).collect()).expect("same shape");
        let rg = self.needs(a);
        self.push(out, rg, op)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(a);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.needs(a);
        Ok(self.push(t, rg, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.needs(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, rg, Op::Transpose(a)))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (rows, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![rows, total], out)?, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (_, cols) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![rows, cols], out)?, rg, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::shape("slice_rows", &[r, c], &[start, len]));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let rg = self.needs(a);
        Ok(self.push(Tensor::new(vec![len, c], data)?, rg, Op::SliceRows(a, start)))
    }

    /// Numerically stable softmax followed by negative log-likelihood of
    /// `target`. `logits` may have any shape; it is read as a flat vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        let n_class = z.len();
        if n_class < 2 {
            return Err(Error::InvalidArgument(format!("softmax needs at least 2 classes, got {n_class}")));
        }
        if target >= n_class {
            return Err(Error::TargetOutOfRange { target, n_class });
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let loss = log_total - (z[target] - max);
        let probs = softmax(z);
        let rg = self.needs(logits);
        Ok(self.push(Tensor::scalar(loss), rg, Op::SoftmaxCrossEntropy { logits, target, probs }))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.needs(v));
        self.push(
            output,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// `x·w + b` with `b` a `[1, p]` row broadcast over the rows of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, _) = self.dims2(x, "linear")?;
        let xw = self.matmul(x, w)?;
        let ones = self.constant(Tensor::full(vec![rows, 1], 1.0));
        let bias = self.matmul(ones, b)?;
        self.add(xw, bias)
    }

    /// Mean over the rows of a 2-D tensor, as a `[1, c]` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, _) = self.dims2(x, "mean_rows")?;
        let w = self.constant(Tensor::full(vec![1, rows], 1.0 / rows as f64));
        self.matmul(w, x)
    }

    /// Reverse sweep from a scalar `loss`. Only leaf gradients are kept.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut send = |v: Var, contrib: Vec<f64>| match &mut grads[v.0] {
            Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(b, c)| *b += c),
            slot @ None => *slot = Some(contrib),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, n) = self.dims2(*a, "matmul")?;
                let (_, p) = self.dims2(*b, "matmul")?;
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * n];
                    matmul_nt(g, self.value(*b).data(), &mut ga, m, n, p);
                    send(*a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; n * p];
                    matmul_tn(self.value(*a).data(), g, &mut gb, m, n, p);
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        send(v, reduce_broadcast(g, self.value(v).numel()));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                if self.needs(*a) {
                    let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * pick(vb, i)).collect();
                    send(*a, reduce_broadcast(&full, va.len()));
                }
                if self.needs(*b) {
                    let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * pick(va, i)).collect();
                    send(*b, reduce_broadcast(&full, vb.len()));
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                send(*a, g.iter().zip(x).map(|(gi, &xi)| if xi > 0.0 { *gi } else { 0.0 }).collect());
            }
            Op::Sigmoid(a) => {
                let s = node.value.data();
                send(*a, g.iter().zip(s).map(|(gi, si)| gi * si * (1.0 - si)).collect());
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|gi| gi * c).collect()),
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Transpose(a) => {
                let (r, c) = self.dims2(*a, "transpose")?;
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = g[j * r + i];
                    }
                }
                send(*a, out);
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.needs(p) {
                        let mut out = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            out.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        send(p, out);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.needs(p) {
                        send(p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let c = src.shape()[1];
                let mut out = vec![0.0; src.numel()];
                out[start * c..start * c + g.len()].copy_from_slice(g);
                send(*a, out);
            }
            Op::SoftmaxCrossEntropy { logits, target, probs } => {
                let mut out: Vec<f64> = probs.iter().map(|p| g[0] * p).collect();
                out[*target] -= g[0];
                send(*logits, out);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let out = op.backward(&values, &node.value, g, &needs);
                debug_assert_eq!(out.len(), inputs.len(), "{} backward arity", op.name());
                for ((&v, gi), need) in inputs.iter().zip(out).zip(needs) {
                    if let (Some(gi), true) = (gi, need) {
                        send(v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

fn reduce_broadcast(g: &[f64], target_len: usize) -> Vec<f64> {
    if target_len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().sum()]
    }
}
