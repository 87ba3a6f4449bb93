//! Tape of tensor operations with a reverse sweep.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and the backward pass is one reverse scan.

use crate::error::{Error, Result};
use crate::params::Entry;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise maps known to the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Identity,
    Relu,
    /// tanh approximation of GELU
    Gelu,
    Tanh,
    Square,
    Neg,
}

impl Unary {
    pub const ALL: [Unary; 6] =
        [Unary::Identity, Unary::Relu, Unary::Gelu, Unary::Tanh, Unary::Square, Unary::Neg];

    pub fn name(self) -> &'static str {
        match self {
            Unary::Identity => "identity",
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Tanh => "tanh",
            Unary::Square => "square",
            Unary::Neg => "neg",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|u| u.name() == name)
            .ok_or_else(|| Error::UnregisteredOp(name.to_string()))
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Identity => x,
            Unary::Relu => x.max(0.0),
            Unary::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Unary::Tanh => x.tanh(),
            Unary::Square => x * x,
            Unary::Neg => -x,
        }
    }

    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Identity => 1.0,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// (rows×cols) + broadcast row vector (cols)
    AddRow(Var, Var),
    /// (rows×cols) ⊙ broadcast row vector (cols)
    MulRow(Var, Var),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulNT(Var, Var),
    Unary(Var, Unary),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    /// out[k] = x.flat[indices[k]]
    Gather { x: Var, indices: Vec<usize> },
    /// out row r = table row ids[r]
    GatherRows { table: Var, ids: Vec<usize> },
    RmsNorm { x: Var, eps: f64 },
    /// masked entries are stored as exact zeros, so the backward rule is unchanged
    Softmax { x: Var },
    Sum(Var),
    Mean(Var),
    /// mean over rows of the per-row squared error
    Mse { pred: Var, target: Var },
    /// mean over rows of −log softmax(row)[target]
    SoftmaxXent { logits: Var, targets: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::Shape(format!("{op}: {msg}"))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Input => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[])
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, &[])
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, op, &[a, b])
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
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s), &[a])
    }

    fn row_op(&mut self, name: &str, x: Var, r: Var) -> Result<(usize, usize)> {
        let (rows, cols) = self.value(x).dims2()?;
        let rl = self.value(r).len();
        if self.value(x).rank() != 2 || rl != cols {
            return Err(shape_err(name, format!("row vector of {rl} against {rows}×{cols}")));
        }
        Ok((rows, cols))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.row_op("add_row", x, bias)?;
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += b[c];
            }
        }
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn mul_row(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (rows, cols) = self.row_op("mul_row", x, scale)?;
        let s = self.value(scale).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] *= s[c];
            }
        }
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::MulRow(x, scale), &[x, scale]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(shape_err("matmul", "operands must be rank 2".into()));
        }
        let (n, k) = ta.dims2()?;
        let (k2, m) = tb.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{n}×{k} · {k2}×{m}")));
        }
        let out = matmul(ta.data(), tb.data(), n, k, m);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(shape_err("matmul_nt", "operands must be rank 2".into()));
        }
        let (n, k) = ta.dims2()?;
        let (m, k2) = tb.dims2()?;
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("{n}×{k} · ({m}×{k2})ᵀ")));
        }
        let out = matmul_nt(ta.data(), tb.data(), n, k, m);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let t = self.value(x).map(|v| f.eval(v));
        self.push(t, Op::Unary(x, f), &[x])
    }

    /// Elementwise map looked up by name; unknown names are rejected here,
    /// before anything is differentiated.
    pub fn apply_named(&mut self, name: &str, x: Var) -> Result<Var> {
        let f = Unary::from_name(name)?;
        Ok(self.unary(x, f))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).slice_cols(start, len)?;
        Ok(self.push(t, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let ts: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let t = Tensor::concat_cols(&ts)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2()?;
        if start + len > rows {
            return Err(shape_err("slice_rows", format!("{start}+{len} exceeds {rows}")));
        }
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(Tensor::matrix(len, cols, data)?, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let cols = self.value(parts[0]).dims2()?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let (r, c) = self.value(*p).dims2()?;
            if c != cols {
                return Err(shape_err("concat_rows", format!("{c} vs {cols} columns")));
            }
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Picks flat coordinates of `x` into a tensor of `shape`.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err("gather", format!("index {bad} out of {}", src.len())));
        }
        let data = indices.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Gather { x, indices }, &[x]))
    }

    /// Tensors for each entry of a parameter layout, read from flat `w`.
    pub fn bind_entries(&mut self, w: Var, entries: &[Entry]) -> Result<Vec<Var>> {
        entries
            .iter()
            .map(|e| self.gather(w, e.range().collect(), e.shape.clone()))
            .collect()
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, dim) = t.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(shape_err("gather_rows", format!("id {id} out of vocabulary {vocab}")));
            }
            data.extend_from_slice(&t.data()[id * dim..(id + 1) * dim]);
        }
        let out = Tensor::matrix(ids.len(), dim, data)?;
        Ok(self.push(out, Op::GatherRows { table, ids: ids.to_vec() }, &[table]))
    }

    /// Row-wise `x / sqrt(mean(x²) + eps)`.
    pub fn rms_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2()?;
        let mut data = t.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::RmsNorm { x, eps }, &[x]))
    }

    /// Row-wise softmax. With `causal`, row `r` only sees columns `0..=r`
    /// and the masked entries are exactly zero.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2()?;
        if causal && rows != cols {
            return Err(shape_err("softmax", format!("causal mask needs a square input, got {rows}×{cols}")));
        }
        let mut data = t.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            if causal {
                softmax_in_place(&mut row[..=r]);
                row[r + 1..].iter_mut().for_each(|v| *v = 0.0);
            } else {
                softmax_in_place(row);
            }
        }
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::Softmax { x }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), &[x]))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let (rows, _) = self.value(pred).dims2()?;
        if rows == 0 {
            return Err(Error::EmptyBatch);
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::scalar(s / rows as f64), Op::Mse { pred, target }, &[pred, target]))
    }

    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, cols) = t.dims2()?;
        if rows == 0 {
            return Err(Error::EmptyBatch);
        }
        if targets.len() != rows {
            return Err(shape_err("softmax_xent", format!("{} targets for {rows} rows", targets.len())));
        }
        let mut total = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= cols {
                return Err(shape_err("softmax_xent", format!("class {y} out of {cols}")));
            }
            let row = &t.data()[r * cols..(r + 1) * cols];
            total += log_sum_exp(row) - row[y];
        }
        let out = Tensor::scalar(total / rows as f64);
        Ok(self.push(out, Op::SoftmaxXent { logits, targets: targets.to_vec() }, &[logits]))
    }

    /// Reverse sweep from a scalar node. Returns adjoints for every node that
    /// depends on an input.
    pub fn backward(&self, root: Var) -> Result<Adjoints> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidArgument("backward needs a scalar root".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        Ok(Adjoints { adj })
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !needs(v) {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Input | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * va[k];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g)),
            Op::AddRow(x, b) => {
                let cols = val(*b).len();
                acc(*x, &|s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        s[k % cols] += gk;
                    }
                });
            }
            Op::MulRow(x, r) => {
                let (vx, vr) = (val(*x).data(), val(*r).data());
                let cols = vr.len();
                acc(*x, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vr[k % cols];
                    }
                });
                acc(*r, &|s| {
                    for (k, gk) in g.iter().enumerate() {
                        s[k % cols] += gk * vx[k];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k) = ta.dims2().unwrap();
                let m = tb.dims2().unwrap().1;
                // dA = G · Bᵀ, dB = Aᵀ · G
                acc(*a, &|s| {
                    let d = matmul_nt(g, tb.data(), n, m, k);
                    s.iter_mut().zip(d).for_each(|(s, d)| *s += d);
                });
                acc(*b, &|s| {
                    let d = matmul_tn(ta.data(), g, n, k, m);
                    s.iter_mut().zip(d).for_each(|(s, d)| *s += d);
                });
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k) = ta.dims2().unwrap();
                let m = tb.dims2().unwrap().0;
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                acc(*a, &|s| {
                    let d = matmul(g, tb.data(), n, m, k);
                    s.iter_mut().zip(d).for_each(|(s, d)| *s += d);
                });
                acc(*b, &|s| {
                    let d = matmul_tn(g, ta.data(), n, m, k);
                    s.iter_mut().zip(d).for_each(|(s, d)| *s += d);
                });
            }
            Op::Unary(x, f) => {
                let (vx, vy) = (val(*x).data(), node.value.data());
                acc(*x, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * f.deriv(vx[k], vy[k]);
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let cols = val(*x).dims2().unwrap().1;
                let (rows, len) = node.value.dims2().unwrap();
                acc(*x, &|s| {
                    for r in 0..rows {
                        for c in 0..len {
                            s[r * cols + start + c] += g[r * len + c];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2().unwrap();
                let mut off = 0;
                for p in parts {
                    let c = val(*p).dims2().unwrap().1;
                    acc(*p, &|s| {
                        for r in 0..rows {
                            for j in 0..c {
                                s[r * c + j] += g[r * total + off + j];
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = node.value.dims2().unwrap().1;
                acc(*x, &|s| {
                    let base = start * cols;
                    for (k, gk) in g.iter().enumerate() {
                        s[base + k] += gk;
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, &|s| {
                        for k in 0..len {
                            s[k] += g[off + k];
                        }
                    });
                    off += len;
                }
            }
            Op::Gather { x, indices } => acc(*x, &|s| {
                for (k, &idx) in indices.iter().enumerate() {
                    s[idx] += g[k];
                }
            }),
            Op::GatherRows { table, ids } => {
                let dim = val(*table).dims2().unwrap().1;
                acc(*table, &|s| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            s[id * dim + c] += g[r * dim + c];
                        }
                    }
                });
            }
            Op::RmsNorm { x, eps } => {
                let vx = val(*x);
                let (rows, cols) = vx.dims2().unwrap();
                acc(*x, &|s| {
                    for r in 0..rows {
                        let xr = &vx.data()[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let ms = xr.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                        let rms = (ms + eps).sqrt();
                        let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let coef = dot / (cols as f64 * rms * rms * rms);
                        for c in 0..cols {
                            s[r * cols + c] += gr[c] / rms - xr[c] * coef;
                        }
                    }
                });
            }
            Op::Softmax { x } => {
                let (rows, cols) = node.value.dims2().unwrap();
                let y = node.value.data();
                acc(*x, &|s| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            s[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                acc(*x, &|s| s.iter_mut().for_each(|s| *s += g[0] / n));
            }
            Op::Mse { pred, target } => {
                let rows = val(*pred).dims2().unwrap().0 as f64;
                let (vp, vt) = (val(*pred).data(), val(*target).data());
                let c = 2.0 * g[0] / rows;
                acc(*pred, &|s| {
                    for k in 0..s.len() {
                        s[k] += c * (vp[k] - vt[k]);
                    }
                });
                acc(*target, &|s| {
                    for k in 0..s.len() {
                        s[k] -= c * (vp[k] - vt[k]);
                    }
                });
            }
            Op::SoftmaxXent { logits, targets } => {
                let t = val(*logits);
                let (rows, cols) = t.dims2().unwrap();
                acc(*logits, &|s| {
                    for (r, &y) in targets.iter().enumerate() {
                        let mut p = t.data()[r * cols..(r + 1) * cols].to_vec();
                        softmax_in_place(&mut p);
                        for c in 0..cols {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            s[r * cols + c] += g[0] * (p[c] - onehot) / rows as f64;
                        }
                    }
                });
            }
        }
    }
}

/// Adjoint values produced by [`Graph::backward`].
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Gradient with respect to `v`, zeros if `v` does not influence the root.
    pub fn of(&self, v: Var, len: usize) -> Vec<f64> {
        self.adj.get(v.0).cloned().flatten().unwrap_or_else(|| vec![0.0; len])
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
