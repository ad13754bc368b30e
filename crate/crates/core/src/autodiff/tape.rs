use super::tensor::{as_matrix, gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SmoothL1 {
        pred: Var,
        target: Var,
        mask: Vec<f64>,
        norm: f64,
    },
    BceLogits {
        logits: Var,
        labels: Vec<f64>,
    },
    Bce {
        probs: Var,
        labels: Vec<f64>,
    },
    Concat(Vec<Var>),
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    SliceCols {
        src: Var,
        start: usize,
    },
    GroupMax {
        src: Var,
        argmax: Vec<usize>,
    },
    RowNormalize {
        src: Var,
        norms: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation. Insertion order is a
/// topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const HUBER_DELTA: f64 = 1.0;
const BCE_EPS: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

fn huber(x: f64) -> f64 {
    let a = x.abs();
    if a < HUBER_DELTA {
        0.5 * x * x
    } else {
        HUBER_DELTA * (a - 0.5 * HUBER_DELTA)
    }
}

fn huber_grad(x: f64) -> f64 {
    if x.abs() < HUBER_DELTA {
        x
    } else {
        HUBER_DELTA * x.signum()
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf: gradients are collected for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A constant input; nothing flows back into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a new constant node.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// `x[n×d] + bias[d]`, the only broadcasting op.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.matrix("add_bias", x)?;
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        if d > 0 {
            for row in data.chunks_mut(d) {
                for (v, bb) in row.iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.needs(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.needs(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| sigmoid(*v)).collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let ng = self.needs(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        let s = self.value(x).sum() / n as f64;
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), ng))
    }

    /// Huber loss (δ = 1) summed over the masked rows and divided by the
    /// mask total; zero when the mask is empty.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, mask: &[f64]) -> Result<Var> {
        self.same_shape("smooth_l1", pred, target)?;
        let (rows, cols) = as_matrix(self.shape(pred));
        if mask.len() != rows {
            return Err(Error::Shape {
                op: "smooth_l1 mask",
                lhs: vec![rows],
                rhs: vec![mask.len()],
            });
        }
        let total: f64 = mask.iter().sum();
        let norm = if total > 0.0 { 1.0 / total } else { 0.0 };
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let mut acc = 0.0;
        for (i, &m) in mask.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let row: f64 = (0..cols)
                .map(|j| huber(p[i * cols + j] - t[i * cols + j]))
                .sum();
            acc += m * row;
        }
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Tensor::scalar(acc * norm),
            Op::SmoothL1 {
                pred,
                target,
                mask: mask.to_vec(),
                norm,
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy on logits against {0,1} labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != labels.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if x.is_empty() {
            return Err(Error::Empty("bce_with_logits"));
        }
        let s: f64 = x
            .iter()
            .zip(labels)
            .map(|(z, y)| softplus(*z) - y * z)
            .sum();
        let v = s / x.len() as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(v),
            Op::BceLogits {
                logits,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Mean binary cross-entropy on probabilities (clamped away from 0 and 1).
    pub fn binary_cross_entropy(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(probs).data();
        if p.len() != labels.len() {
            return Err(Error::Shape {
                op: "binary_cross_entropy",
                lhs: self.shape(probs).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if p.is_empty() {
            return Err(Error::Empty("binary_cross_entropy"));
        }
        let s: f64 = p
            .iter()
            .zip(labels)
            .map(|(q, y)| {
                let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        let v = s / p.len() as f64;
        let ng = self.needs(probs);
        Ok(self.push(
            Tensor::scalar(v),
            Op::Bce {
                probs,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    /// Concatenates matrices with equal row counts along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = self.matrix("concat_cols", first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix("concat_cols", p)?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..rows {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::Concat(parts.to_vec()),
            ng,
        ))
    }

    /// Selects rows by constant indices; repeated indices are allowed.
    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var> {
        let (n, d) = self.matrix("gather_rows", src)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::arg(format!("gather_rows index {bad} out of range for {n} rows")));
        }
        let s = self.value(src).data();
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(&s[i * d..(i + 1) * d]);
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor::from_parts(vec![index.len(), d], data),
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.matrix("slice_cols", src)?;
        if start > end || end > d {
            return Err(Error::arg(format!("slice_cols {start}..{end} out of range for width {d}")));
        }
        let w = end - start;
        let s = self.value(src).data();
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&s[i * d + start..i * d + end]);
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor::from_parts(vec![n, w], data),
            Op::SliceCols { src, start },
            ng,
        ))
    }

    /// Column-wise maximum over consecutive blocks of `group` rows:
    /// `[g·group × d] → [g × d]`. Ties go to the first row of the block.
    pub fn group_max_pool(&mut self, src: Var, group: usize) -> Result<Var> {
        let (n, d) = self.matrix("group_max_pool", src)?;
        if group == 0 || n == 0 {
            return Err(Error::Empty("group_max_pool"));
        }
        if n % group != 0 {
            return Err(Error::Shape {
                op: "group_max_pool",
                lhs: vec![n, d],
                rhs: vec![group],
            });
        }
        let g = n / group;
        let s = self.value(src).data();
        let mut data = vec![f64::NEG_INFINITY; g * d];
        let mut argmax = vec![0usize; g * d];
        for gi in 0..g {
            let out = &mut data[gi * d..(gi + 1) * d];
            let arg = &mut argmax[gi * d..(gi + 1) * d];
            for r in gi * group..(gi + 1) * group {
                let row = &s[r * d..(r + 1) * d];
                for j in 0..d {
                    if row[j] > out[j] || r == gi * group {
                        out[j] = row[j];
                        arg[j] = r;
                    }
                }
            }
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor::from_parts(vec![g, d], data),
            Op::GroupMax { src, argmax },
            ng,
        ))
    }

    /// Scales every row to unit L2 norm (rows with norm below 1e-12 are
    /// divided by 1e-12 instead).
    pub fn row_normalize(&mut self, src: Var) -> Result<Var> {
        let (n, d) = self.matrix("row_normalize", src)?;
        let s = self.value(src).data();
        let mut norms = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = &s[i * d..(i + 1) * d];
            let nr = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            norms.push(nr);
            data.extend(row.iter().map(|v| v / nr));
        }
        let ng = self.needs(src);
        Ok(self.push(
            Tensor::from_parts(vec![n, d], data),
            Op::RowNormalize { src, norms },
            ng,
        ))
    }

    /// Column-wise maximum across all rows: `[n × d] → [d]`.
    pub fn max_pool_over_points(&mut self, src: Var) -> Result<Var> {
        let (n, _) = self.matrix("max_pool_over_points", src)?;
        if n == 0 {
            return Err(Error::Empty("max_pool_over_points"));
        }
        let v = self.group_max_pool(src, n)?;
        let node = &mut self.nodes[v.0];
        let d = node.value.cols();
        node.value = std::mem::replace(&mut node.value, Tensor::scalar(0.0)).reshape(vec![d])?;
        Ok(v)
    }

    /// Reverse sweep from a single-element `loss`. Nodes that do not depend
    /// on any trainable leaf are skipped.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
        if !self.needs(v) {
            return;
        }
        let g = make();
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.shape(*a));
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, || {
                    let mut out = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv, true, &mut out, false);
                    Tensor::from_parts(vec![m, k], out)
                });
                self.accumulate(grads, *b, || {
                    let mut out = vec![0.0; k * n];
                    gemm(k, m, n, av, true, gd, false, &mut out, false);
                    Tensor::from_parts(vec![k, n], out)
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || {
                    Tensor::from_parts(g.shape().to_vec(), gd.iter().map(|v| -v).collect())
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, || {
                    Tensor::from_parts(g.shape().to_vec(), gd.iter().zip(bv).map(|(x, y)| x * y).collect())
                });
                self.accumulate(grads, *b, || {
                    Tensor::from_parts(g.shape().to_vec(), gd.iter().zip(av).map(|(x, y)| x * y).collect())
                });
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, || g.clone());
                self.accumulate(grads, *bias, || {
                    let d = self.shape(*bias)[0];
                    let mut out = vec![0.0; d];
                    if d > 0 {
                        for row in gd.chunks(d) {
                            for (o, v) in out.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                    Tensor::from_parts(vec![d], out)
                });
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, || {
                    Tensor::from_parts(g.shape().to_vec(), gd.iter().map(|v| v * c).collect())
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, || {
                    Tensor::from_parts(
                        g.shape().to_vec(),
                        gd.iter().zip(xv).map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 }).collect(),
                    )
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, || {
                    Tensor::from_parts(
                        g.shape().to_vec(),
                        gd.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect(),
                    )
                });
            }
            Op::Sum(x) => {
                let s = gd[0];
                self.accumulate(grads, *x, || Tensor::filled(self.shape(*x), s));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let s = gd[0] / n;
                self.accumulate(grads, *x, || Tensor::filled(self.shape(*x), s));
            }
            Op::SmoothL1 {
                pred,
                target,
                mask,
                norm,
            } => {
                let scale = gd[0] * norm;
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let cols = as_matrix(self.shape(*pred)).1;
                let mut dp = vec![0.0; p.len()];
                for (i, &m) in mask.iter().enumerate() {
                    if m == 0.0 {
                        continue;
                    }
                    for j in 0..cols {
                        let k = i * cols + j;
                        dp[k] = scale * m * huber_grad(p[k] - t[k]);
                    }
                }
                let shape = self.shape(*pred).to_vec();
                if self.needs(*target) {
                    let neg = dp.iter().map(|v| -v).collect();
                    self.accumulate(grads, *target, || Tensor::from_parts(shape.clone(), neg));
                }
                self.accumulate(grads, *pred, || Tensor::from_parts(shape, dp));
            }
            Op::BceLogits { logits, labels } => {
                let x = self.value(*logits).data();
                let s = gd[0] / x.len() as f64;
                self.accumulate(grads, *logits, || {
                    Tensor::from_parts(
                        self.shape(*logits).to_vec(),
                        x.iter().zip(labels).map(|(z, y)| s * (sigmoid(*z) - y)).collect(),
                    )
                });
            }
            Op::Bce { probs, labels } => {
                let p = self.value(*probs).data();
                let s = gd[0] / p.len() as f64;
                self.accumulate(grads, *probs, || {
                    Tensor::from_parts(
                        self.shape(*probs).to_vec(),
                        p.iter()
                            .zip(labels)
                            .map(|(q, y)| {
                                if *q <= BCE_EPS || *q >= 1.0 - BCE_EPS {
                                    0.0
                                } else {
                                    s * ((1.0 - y) / (1.0 - q) - y / q)
                                }
                            })
                            .collect(),
                    )
                });
            }
            Op::Concat(parts) => {
                let (rows, total) = as_matrix(g.shape());
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.accumulate(grads, p, || {
                        let mut out = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            out.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                        }
                        Tensor::from_parts(vec![rows, w], out)
                    });
                    off += w;
                }
            }
            Op::GatherRows { src, index } => {
                let d = self.shape(*src)[1];
                let n = self.shape(*src)[0];
                self.accumulate(grads, *src, || {
                    let mut out = vec![0.0; n * d];
                    for (r, &i) in index.iter().enumerate() {
                        for j in 0..d {
                            out[i * d + j] += gd[r * d + j];
                        }
                    }
                    Tensor::from_parts(vec![n, d], out)
                });
            }
            Op::SliceCols { src, start } => {
                let (n, d) = (self.shape(*src)[0], self.shape(*src)[1]);
                let w = g.cols();
                self.accumulate(grads, *src, || {
                    let mut out = vec![0.0; n * d];
                    for i in 0..n {
                        out[i * d + start..i * d + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                    }
                    Tensor::from_parts(vec![n, d], out)
                });
            }
            Op::RowNormalize { src, norms } => {
                let d = g.cols();
                let y = node.value.data();
                self.accumulate(grads, *src, || {
                    let mut out = vec![0.0; gd.len()];
                    for (i, &nr) in norms.iter().enumerate() {
                        let yr = &y[i * d..(i + 1) * d];
                        let gr = &gd[i * d..(i + 1) * d];
                        if nr <= NORM_EPS {
                            for j in 0..d {
                                out[i * d + j] = gr[j] / nr;
                            }
                            continue;
                        }
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            out[i * d + j] = (gr[j] - yr[j] * dot) / nr;
                        }
                    }
                    Tensor::from_parts(g.shape().to_vec(), out)
                });
            }
            Op::GroupMax { src, argmax } => {
                let (n, d) = (self.shape(*src)[0], self.shape(*src)[1]);
                self.accumulate(grads, *src, || {
                    let mut out = vec![0.0; n * d];
                    for (k, &r) in argmax.iter().enumerate() {
                        out[r * d + k % d] += gd[k];
                    }
                    Tensor::from_parts(vec![n, d], out)
                });
            }
        }
    }
}
