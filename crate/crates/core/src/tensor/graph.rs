use std::fmt;

use serde::{Deserialize, Serialize};

use super::kernels::{self, gemm};
use super::{Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeluKind {
    /// `x * Phi(x)` with the erf-based normal CDF.
    #[default]
    Exact,
    /// The tanh approximation.
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `a · b` (or `a · bᵀ` with `trans_b`). `a` is `[.., m, k]`; `b` is
    /// either a shared matrix or carries the same leading batch dims as `a`.
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    MulRow {
        x: Var,
        row: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    MulConst {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    /// Softmax over the last axis. `mask` has one row of length `n` per
    /// group of consecutive softmax rows; masked entries come out as exactly 0.
    Softmax {
        x: Var,
        mask: Option<Vec<bool>>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Gelu {
        x: Var,
        kind: GeluKind,
    },
    Sigmoid(Var),
    /// `[b, l, d] -> [b, d]`, averaging only unmasked rows.
    MaskedMean {
        x: Var,
        mask: Vec<bool>,
    },
    Reshape(Var),
    /// `[b, l, h*dk] -> [b*h, l, dk]`.
    SplitHeads {
        x: Var,
        heads: usize,
    },
    /// `[b*h, l, dk] -> [b, l, h*dk]`.
    MergeHeads {
        x: Var,
        heads: usize,
    },
    /// Row lookup into a `[v, d]` table; `None` yields a zero row.
    Gather {
        table: Var,
        ids: Vec<Option<usize>>,
    },
    /// Places the rows of `[r, d]` at `positions` inside a zero `[total, d]`.
    ScatterRows {
        x: Var,
        positions: Vec<usize>,
    },
    /// `-Σ w_i [y_i ln p_i + (1 - y_i) ln(1 - p_i)]`, logs clamped at `eps`.
    WeightedBce {
        pred: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
        eps: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::AddRow { .. } => "add_row",
            Op::MulRow { .. } => "mul_row",
            Op::Scale { .. } => "scale",
            Op::MulConst { .. } => "mul_const",
            Op::Sum(_) => "sum",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MaskedMean { .. } => "masked_mean",
            Op::Reshape(_) => "reshape",
            Op::SplitHeads { .. } => "split_heads",
            Op::MergeHeads { .. } => "merge_heads",
            Op::Gather { .. } => "gather",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::WeightedBce { .. } => "weighted_bce",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRow { x, row } | Op::MulRow { x, row } => vec![*x, *row],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Scale { x, .. }
            | Op::MulConst { x, .. }
            | Op::Softmax { x, .. }
            | Op::Gelu { x, .. }
            | Op::MaskedMean { x, .. }
            | Op::SplitHeads { x, .. }
            | Op::MergeHeads { x, .. }
            | Op::ScatterRows { x, .. } => vec![*x],
            Op::Sum(x) | Op::Sigmoid(x) | Op::Reshape(x) => vec![*x],
            Op::Gather { table, .. } => vec![*table],
            Op::WeightedBce { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record: every node in creation (hence topological) order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().expect("tensor rank >= 1")
}

/// Splits `[.., m, k]` into (batch, m, k).
fn as_batched(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let batch = shape[..r - 2].iter().product();
    (batch, shape[r - 2], shape[r - 1])
}

/// Shape of `b`'s contribution: (batched?, k, n) under the transpose flag.
fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize, usize, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch("matmul", a, b));
    }
    let (batch, m, k) = as_batched(a);
    let batched_b = b.len() > 2;
    if batched_b && b[..b.len() - 2] != a[..a.len() - 2] {
        return Err(mismatch("matmul", a, b));
    }
    let (_, br, bc) = as_batched(b);
    let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
    if bk != k {
        return Err(mismatch("matmul", a, b));
    }
    Ok((batch, m, k, n, batched_b))
}

/// Evaluates one primitive from its input values.
fn compute<'a>(op: &Op, val: &dyn Fn(Var) -> &'a Tensor) -> Result<Tensor> {
    match op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::MatMul { a, b, trans_b } => {
            let (a, b) = (val(*a), val(*b));
            let (batch, m, k, n, batched_b) = matmul_dims(a.shape(), b.shape(), *trans_b)?;
            let mut out = vec![0.0; batch * m * n];
            if batched_b {
                for t in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &a.data()[t * m * k..(t + 1) * m * k],
                        false,
                        &b.data()[t * k * n..(t + 1) * k * n],
                        *trans_b,
                        0.0,
                        &mut out[t * m * n..(t + 1) * m * n],
                    );
                }
            } else {
                gemm(batch * m, k, n, a.data(), false, b.data(), *trans_b, 0.0, &mut out);
            }
            let mut shape = a.shape()[..a.rank() - 1].to_vec();
            shape.push(n);
            Tensor::new(shape, out)
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (a, b) = (val(*a), val(*b));
            if a.shape() != b.shape() {
                return Err(mismatch(op.name(), a.shape(), b.shape()));
            }
            let data = if matches!(op, Op::Add(..)) {
                a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()
            } else {
                a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
            };
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::AddRow { x, row } | Op::MulRow { x, row } => {
            let (x, row) = (val(*x), val(*row));
            let d = last_dim(x);
            if row.shape() != [d] {
                return Err(mismatch(op.name(), x.shape(), row.shape()));
            }
            let r = row.data();
            let add = matches!(op, Op::AddRow { .. });
            let data = x
                .data()
                .chunks_exact(d)
                .flat_map(|chunk| {
                    chunk
                        .iter()
                        .zip(r)
                        .map(move |(v, w)| if add { v + w } else { v * w })
                })
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        }
        Op::Scale { x, factor } => {
            let x = val(*x);
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * factor).collect())
        }
        Op::MulConst { x, mask } => {
            let x = val(*x);
            if mask.len() != x.len() {
                return Err(mismatch("mul_const", x.shape(), &[mask.len()]));
            }
            Tensor::new(
                x.shape().to_vec(),
                x.data().iter().zip(mask).map(|(v, m)| v * m).collect(),
            )
        }
        Op::Sum(x) => Ok(Tensor::scalar(val(*x).data().iter().sum())),
        Op::Softmax { x, mask } => {
            let x = val(*x);
            let n = last_dim(x);
            let rows = x.len() / n;
            let per_group = match mask {
                Some(m) => {
                    let groups = m.len() / n;
                    if m.len() % n != 0 || groups == 0 || rows % groups != 0 {
                        return Err(mismatch("softmax", x.shape(), &[m.len()]));
                    }
                    rows / groups
                }
                None => rows,
            };
            let mut out = vec![0.0; x.len()];
            for (r, (src, dst)) in x.data().chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
                let keep = mask.as_ref().map(|m| &m[(r / per_group) * n..(r / per_group + 1) * n]);
                let live = |j: usize| keep.map_or(true, |k| k[j]);
                let mut max = f64::NEG_INFINITY;
                for (j, &v) in src.iter().enumerate() {
                    if live(j) && v > max {
                        max = v;
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(TensorError::AllMasked { index: r / per_group });
                }
                let mut total = 0.0;
                for (j, &v) in src.iter().enumerate() {
                    if live(j) {
                        let e = (v - max).exp();
                        dst[j] = e;
                        total += e;
                    }
                }
                dst.iter_mut().for_each(|v| *v /= total);
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let (x, gain, bias) = (val(*x), val(*gain), val(*bias));
            let d = last_dim(x);
            if gain.shape() != [d] || bias.shape() != [d] {
                return Err(mismatch("layer_norm", x.shape(), gain.shape()));
            }
            let mut out = vec![0.0; x.len()];
            for (src, dst) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                let (mean, rstd) = row_stats(src, *eps);
                for j in 0..d {
                    dst[j] = (src[j] - mean) * rstd * gain.data()[j] + bias.data()[j];
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Op::Gelu { x, kind } => {
            let x = val(*x);
            let f = match kind {
                GeluKind::Exact => kernels::gelu_exact,
                GeluKind::Tanh => kernels::gelu_tanh,
            };
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        }
        Op::Sigmoid(x) => {
            let x = val(*x);
            Tensor::new(
                x.shape().to_vec(),
                x.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
            )
        }
        Op::MaskedMean { x, mask } => {
            let x = val(*x);
            if x.rank() != 3 || mask.len() != x.shape()[0] * x.shape()[1] {
                return Err(mismatch("masked_mean", x.shape(), &[mask.len()]));
            }
            let (b, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let mut out = vec![0.0; b * d];
            for s in 0..b {
                let live = &mask[s * l..(s + 1) * l];
                let count = live.iter().filter(|&&m| m).count();
                if count == 0 {
                    return Err(TensorError::AllMasked { index: s });
                }
                let dst = &mut out[s * d..(s + 1) * d];
                for (i, _) in live.iter().enumerate().filter(|(_, &m)| m) {
                    let row = &x.data()[(s * l + i) * d..(s * l + i + 1) * d];
                    dst.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                }
                let inv = 1.0 / count as f64;
                dst.iter_mut().for_each(|v| *v *= inv);
            }
            Tensor::new(vec![b, d], out)
        }
        Op::Reshape(_) => unreachable!("reshape is handled by the caller"),
        Op::SplitHeads { x, heads } => {
            let x = val(*x);
            let (b, l, hd) = as_batched(x.shape());
            let dk = hd / heads;
            let mut out = vec![0.0; x.len()];
            for s in 0..b {
                for i in 0..l {
                    for h in 0..*heads {
                        let src = ((s * l + i) * heads + h) * dk;
                        let dst = (((s * heads + h) * l) + i) * dk;
                        out[dst..dst + dk].copy_from_slice(&x.data()[src..src + dk]);
                    }
                }
            }
            Tensor::new(vec![b * heads, l, dk], out)
        }
        Op::MergeHeads { x, heads } => {
            let x = val(*x);
            let (bh, l, dk) = as_batched(x.shape());
            let b = bh / heads;
            let mut out = vec![0.0; x.len()];
            for s in 0..b {
                for i in 0..l {
                    for h in 0..*heads {
                        let dst = ((s * l + i) * heads + h) * dk;
                        let src = (((s * heads + h) * l) + i) * dk;
                        out[dst..dst + dk].copy_from_slice(&x.data()[src..src + dk]);
                    }
                }
            }
            Tensor::new(vec![b, l, heads * dk], out)
        }
        Op::Gather { table, ids } => {
            let table = val(*table);
            let (v, d) = (table.shape()[0], table.shape()[1]);
            let mut out = vec![0.0; ids.len() * d];
            for (row, id) in ids.iter().enumerate() {
                if let Some(id) = *id {
                    if id >= v {
                        return Err(invalid("gather", format!("row {id} out of range for {v} rows")));
                    }
                    out[row * d..(row + 1) * d].copy_from_slice(&table.data()[id * d..(id + 1) * d]);
                }
            }
            Tensor::new(vec![ids.len(), d], out)
        }
        Op::ScatterRows { .. } => unreachable!("scatter is handled by the caller"),
        Op::WeightedBce {
            pred,
            targets,
            weights,
            eps,
        } => {
            let p = val(*pred);
            if p.len() != targets.len() || p.len() != weights.len() {
                return Err(mismatch("weighted_bce", p.shape(), &[targets.len()]));
            }
            let mut loss = 0.0;
            for ((&p, &y), &w) in p.data().iter().zip(targets).zip(weights) {
                loss -= w * (y * p.max(*eps).ln() + (1.0 - y) * (1.0 - p).max(*eps).ln());
            }
            Ok(Tensor::scalar(loss))
        }
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
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

    /// Every node handle in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
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

    /// Adds a leaf. Its gradient is tracked when `t.requires_grad()` is set.
    pub fn input(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.input(t.with_requires_grad(false))
    }

    /// Adds a leaf that always receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.input(t.with_requires_grad(true))
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = match &op {
            Op::Reshape(_) | Op::ScatterRows { .. } => unreachable!(),
            _ => {
                let nodes = &self.nodes;
                compute(&op, &|v: Var| &nodes[v.0].value)?
            }
        };
        Ok(self.push(op, value))
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product `a · b`; `a` may carry leading batch dims, `b` is either
    /// a shared `[k, n]` matrix or batched like `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul { a, b, trans_b: false })
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul { a, b, trans_b: true })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    /// Adds a `[d]` vector to every row of `x[.., d]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.record(Op::AddRow { x, row })
    }

    /// Multiplies every row of `x[.., d]` elementwise by a `[d]` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.record(Op::MulRow { x, row })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.record(Op::Scale { x, factor })
    }

    /// Elementwise product with a fixed multiplier buffer (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        self.record(Op::MulConst { x, mask })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum(x))
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Softmax { x, mask: None })
    }

    /// Softmax over the last axis where `key_mask` (`groups × n`, row-major)
    /// selects the live keys for each group of consecutive rows. Masked keys
    /// get probability exactly zero; a group with no live key is an error.
    pub fn masked_softmax(&mut self, x: Var, key_mask: Vec<bool>) -> Result<Var> {
        self.record(Op::Softmax { x, mask: Some(key_mask) })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        self.record(Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn gelu(&mut self, x: Var, kind: GeluKind) -> Result<Var> {
        self.record(Op::Gelu { x, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid(x))
    }

    /// Mean over the first axis of an `[n, d]` tensor.
    pub fn mean_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(invalid("mean_pool", format!("expected [n, d], got {shape:?}")));
        }
        let x3 = self.reshape(x, vec![1, shape[0], shape[1]])?;
        let pooled = self.masked_mean(x3, vec![true; shape[0]])?;
        self.reshape(pooled, vec![shape[1]])
    }

    /// `[b, l, d] -> [b, d]`: per-sequence mean over unmasked rows.
    pub fn masked_mean(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        self.record(Op::MaskedMean { x, mask })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(x), &shape));
        }
        let value = self.value(x).clone().with_requires_grad(false).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 || heads == 0 || shape[2] % heads != 0 {
            return Err(invalid("split_heads", format!("{shape:?} into {heads} heads")));
        }
        self.record(Op::SplitHeads { x, heads })
    }

    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 || heads == 0 || shape[0] % heads != 0 {
            return Err(invalid("merge_heads", format!("{shape:?} from {heads} heads")));
        }
        self.record(Op::MergeHeads { x, heads })
    }

    /// Embedding lookup: one output row per id, zero rows for `None`.
    pub fn gather(&mut self, table: Var, ids: Vec<Option<usize>>) -> Result<Var> {
        if self.shape(table).len() != 2 || ids.is_empty() {
            return Err(invalid("gather", "expected a [v, d] table and at least one id"));
        }
        self.record(Op::Gather { table, ids })
    }

    /// Scatters `[r, d]` rows into a zero `[total, d]` tensor.
    pub fn scatter_rows(&mut self, x: Var, positions: Vec<usize>, total: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || positions.len() != shape[0] || total == 0 {
            return Err(mismatch("scatter_rows", &shape, &[positions.len(), total]));
        }
        let d = shape[1];
        let mut seen = vec![false; total];
        let mut out = vec![0.0; total * d];
        for (r, &p) in positions.iter().enumerate() {
            if p >= total || seen[p] {
                return Err(invalid("scatter_rows", format!("bad or repeated position {p}")));
            }
            seen[p] = true;
            out[p * d..(p + 1) * d].copy_from_slice(&self.value(x).data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::new(vec![total, d], out)?;
        Ok(self.push(Op::ScatterRows { x, positions }, value))
    }

    /// Summed weighted binary cross-entropy of probabilities against 0/1 targets.
    pub fn weighted_bce(&mut self, pred: Var, targets: Vec<f64>, weights: Vec<f64>, eps: f64) -> Result<Var> {
        self.record(Op::WeightedBce {
            pred,
            targets,
            weights,
            eps,
        })
    }

    /// Re-executes every recorded primitive from the stored leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Reshape(x) => values[x.0].clone().reshape(node.value.shape().to_vec())?,
                Op::ScatterRows { x, positions } => {
                    let src = &values[x.0];
                    let d = src.shape()[1];
                    let total = node.value.shape()[0];
                    let mut out = vec![0.0; total * d];
                    for (r, &p) in positions.iter().enumerate() {
                        out[p * d..(p + 1) * d].copy_from_slice(&src.data()[r * d..(r + 1) * d]);
                    }
                    Tensor::new(vec![total, d], out)?
                }
                op => {
                    let vals = &values;
                    compute(op, &|v: Var| &vals[v.0])?
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Reverse-mode accumulation from a scalar `loss`. Every leaf that
    /// requires a gradient gets one; leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (val(*a), val(*b));
                let (batch, m, k, n, batched_b) =
                    matmul_dims(av.shape(), bv.shape(), *trans_b).expect("validated on record");
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], av.len(), |da| {
                        // dA = G · op(B)ᵀ
                        if batched_b {
                            for t in 0..batch {
                                gemm(
                                    m,
                                    n,
                                    k,
                                    &g[t * m * n..(t + 1) * m * n],
                                    false,
                                    &bv.data()[t * k * n..(t + 1) * k * n],
                                    !*trans_b,
                                    1.0,
                                    &mut da[t * m * k..(t + 1) * m * k],
                                );
                            }
                        } else {
                            gemm(batch * m, n, k, g, false, bv.data(), !*trans_b, 1.0, da);
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], bv.len(), |db| {
                        // dB = Aᵀ · G, or Gᵀ · A for the transposed operand.
                        let step = |a_blk: &[f64], g_blk: &[f64], rows: usize, db_blk: &mut [f64]| {
                            if *trans_b {
                                gemm(n, rows, k, g_blk, true, a_blk, false, 1.0, db_blk);
                            } else {
                                gemm(k, rows, n, a_blk, true, g_blk, false, 1.0, db_blk);
                            }
                        };
                        if batched_b {
                            for t in 0..batch {
                                step(
                                    &av.data()[t * m * k..(t + 1) * m * k],
                                    &g[t * m * n..(t + 1) * m * n],
                                    m,
                                    &mut db[t * k * n..(t + 1) * k * n],
                                );
                            }
                        } else {
                            step(av.data(), g, batch * m, db);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], g.len(), |dv| {
                            dv.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.len(), |da| {
                        for i in 0..g.len() {
                            da[i] += g[i] * bv[i];
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.len(), |db| {
                        for i in 0..g.len() {
                            db[i] += g[i] * av[i];
                        }
                    });
                }
            }
            Op::AddRow { x, row } => {
                let d = val(*row).len();
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)
                    });
                }
                if self.wants(*row) {
                    accumulate(&mut grads[row.0], d, |dr| {
                        for chunk in g.chunks_exact(d) {
                            dr.iter_mut().zip(chunk).for_each(|(d, gi)| *d += gi);
                        }
                    });
                }
            }
            Op::MulRow { x, row } => {
                let (xv, rv) = (val(*x).data(), val(*row).data());
                let d = rv.len();
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        for (i, (d_i, gi)) in dx.iter_mut().zip(g).enumerate() {
                            *d_i += gi * rv[i % d];
                        }
                    });
                }
                if self.wants(*row) {
                    accumulate(&mut grads[row.0], d, |dr| {
                        for (i, (gi, xi)) in g.iter().zip(xv).enumerate() {
                            dr[i % d] += gi * xi;
                        }
                    });
                }
            }
            Op::Scale { x, factor } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * factor)
                    });
                }
            }
            Op::MulConst { x, mask } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        for i in 0..g.len() {
                            dx[i] += g[i] * mask[i];
                        }
                    });
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let n = val(*x).len();
                    accumulate(&mut grads[x.0], n, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
                }
            }
            Op::Softmax { x, .. } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let n = last_dim(&node.value);
                    accumulate(&mut grads[x.0], y.len(), |dx| {
                        for ((yr, gr), dr) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(dx.chunks_exact_mut(n)) {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                dr[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = val(*x).data();
                let gv = val(*gain).data();
                let d = gv.len();
                let rows = xv.len() / d;
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut dx_all = vec![0.0; xv.len()];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let src = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let (mean, rstd) = row_stats(src, *eps);
                    for j in 0..d {
                        xhat[j] = (src[j] - mean) * rstd;
                        dxhat[j] = gr[j] * gv[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dxhat_xhat = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    let dst = &mut dx_all[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], xv.len(), |dx| {
                        dx.iter_mut().zip(&dx_all).for_each(|(d, v)| *d += v)
                    });
                }
                for (v, buf) in [(gain, &dgain), (bias, &dbias)] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], d, |dv| dv.iter_mut().zip(buf).for_each(|(d, b)| *d += b));
                    }
                }
            }
            Op::Gelu { x, kind } => {
                if self.wants(*x) {
                    let xv = val(*x).data();
                    let df = match kind {
                        GeluKind::Exact => kernels::gelu_exact_grad,
                        GeluKind::Tanh => kernels::gelu_tanh_grad,
                    };
                    accumulate(&mut grads[x.0], xv.len(), |dx| {
                        for i in 0..xv.len() {
                            dx[i] += g[i] * df(xv[i]);
                        }
                    });
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    accumulate(&mut grads[x.0], y.len(), |dx| {
                        for i in 0..y.len() {
                            dx[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    });
                }
            }
            Op::MaskedMean { x, mask } => {
                if self.wants(*x) {
                    let shape = val(*x).shape();
                    let (b, l, d) = (shape[0], shape[1], shape[2]);
                    accumulate(&mut grads[x.0], b * l * d, |dx| {
                        for s in 0..b {
                            let live = &mask[s * l..(s + 1) * l];
                            let inv = 1.0 / live.iter().filter(|&&m| m).count() as f64;
                            let gs = &g[s * d..(s + 1) * d];
                            for (i, _) in live.iter().enumerate().filter(|(_, &m)| m) {
                                let dst = &mut dx[(s * l + i) * d..(s * l + i + 1) * d];
                                dst.iter_mut().zip(gs).for_each(|(o, gi)| *o += gi * inv);
                            }
                        }
                    });
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)
                    });
                }
            }
            Op::SplitHeads { x, heads } | Op::MergeHeads { x, heads } => {
                if self.wants(*x) {
                    // Both are permutations; route the gradient through the inverse.
                    let inverse = match node.op {
                        Op::SplitHeads { .. } => Op::MergeHeads { x: Var(0), heads: *heads },
                        _ => Op::SplitHeads { x: Var(0), heads: *heads },
                    };
                    let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("grad shape");
                    let routed = compute(&inverse, &|_| &gt).expect("permutation");
                    accumulate(&mut grads[x.0], g.len(), |dx| {
                        dx.iter_mut().zip(routed.data()).for_each(|(d, gi)| *d += gi)
                    });
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let tv = val(*table);
                    let d = tv.shape()[1];
                    accumulate(&mut grads[table.0], tv.len(), |dt| {
                        for (row, id) in ids.iter().enumerate() {
                            if let Some(id) = *id {
                                let dst = &mut dt[id * d..(id + 1) * d];
                                dst.iter_mut()
                                    .zip(&g[row * d..(row + 1) * d])
                                    .for_each(|(o, gi)| *o += gi);
                            }
                        }
                    });
                }
            }
            Op::ScatterRows { x, positions } => {
                if self.wants(*x) {
                    let d = last_dim(&node.value);
                    accumulate(&mut grads[x.0], positions.len() * d, |dx| {
                        for (r, &p) in positions.iter().enumerate() {
                            let dst = &mut dx[r * d..(r + 1) * d];
                            dst.iter_mut()
                                .zip(&g[p * d..(p + 1) * d])
                                .for_each(|(o, gi)| *o += gi);
                        }
                    });
                }
            }
            Op::WeightedBce {
                pred,
                targets,
                weights,
                eps,
            } => {
                if self.wants(*pred) {
                    let p = val(*pred).data();
                    accumulate(&mut grads[pred.0], p.len(), |dp| {
                        for i in 0..p.len() {
                            let y = targets[i];
                            dp[i] += g[0] * -weights[i] * (y / p[i].max(*eps) - (1.0 - y) / (1.0 - p[i]).max(*eps));
                        }
                    });
                }
            }
        }
    }
}

impl fmt::Display for Graph {
    /// One line per recorded node: `%id = op(%inputs) shape grad?`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, node) in self.nodes.iter().enumerate() {
            let args: Vec<String> = node.op.inputs().iter().map(|v| format!("%{}", v.0)).collect();
            writeln!(
                f,
                "%{i} = {}({}) {:?}{}",
                node.op.name(),
                args.join(", "),
                node.value.shape(),
                if node.requires_grad { " grad" } else { "" }
            )?;
        }
        Ok(())
    }
}
