//! Reverse-mode automatic differentiation over a flat expression tape.
//!
//! A [`Graph`] records every intermediate [`Tensor`] as a node; [`Var`] is an
//! index into the tape. Parents always precede children, so one reverse sweep
//! over the tape propagates gradients from a scalar loss to every leaf.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{clamp_prob, matmul, matmul_nt, matmul_tn, softmax_masked, Parameter, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    /// `a · bᵀ` fused, so no transpose node is materialized.
    MatmulNt { a: usize, b: usize },
    Add { a: usize, b: usize },
    /// Broadcast a 1-D vector across every row of a matrix.
    AddRow { m: usize, v: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Sigmoid { x: usize },
    Tanh { x: usize },
    ConcatRows { parts: Rc<Vec<usize>> },
    ConcatCols { a: usize, b: usize },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    RepeatRows { v: usize },
    /// Masking is applied in the forward value; masked outputs are exactly
    /// zero, which already kills their gradient, so the op needs no mask here.
    SoftmaxRows { x: usize },
    /// Row lookup into an embedding table.
    Gather { table: usize, ids: Rc<Vec<usize>> },
    /// Sum of −ln p[t, targets[t]] over positions where mask[t] is true.
    CeSum { probs: usize, targets: Rc<Vec<usize>>, mask: Rc<Vec<bool>> },
    SumAll { x: usize },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Expression tape: build a computation forward, then call [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts an input or constant node.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Inserts a parameter's current value as a leaf.
    pub fn param(&mut self, p: &Parameter) -> Var {
        self.leaf(p.value.clone())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root w.r.t. `v`; `None` means zero
    /// (the node does not influence the root).
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul { a: a.0, b: b.0 }))
    }

    /// `a · bᵀ` where both operands are laid out row-major.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatmulNt { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v = Tensor::from_fn(ta.shape(), |i| ta.data()[i] + tb.data()[i]);
        Ok(self.push(v, Op::Add { a: a.0, b: b.0 }))
    }

    /// `m + v` with `v: [d]` broadcast over the rows of `m: [t, d]`.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape() != [tm.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: tm.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let d = tm.shape()[1];
        let out = Tensor::from_fn(tm.shape(), |i| tm.data()[i] + tv.data()[i % d]);
        Ok(self.push(out, Op::AddRow { m: m.0, v: v.0 }))
    }

    /// Elementwise product of same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v = Tensor::from_fn(ta.shape(), |i| ta.data()[i] * tb.data()[i]);
        Ok(self.push(v, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let tx = self.value(x);
        let v = Tensor::from_fn(tx.shape(), |i| tx.data()[i] * c);
        self.push(v, Op::Scale { x: x.0, c })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let v = Tensor::from_fn(tx.shape(), |i| 1.0 / (1.0 + (-tx.data()[i]).exp()));
        self.push(v, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let v = Tensor::from_fn(tx.shape(), |i| tx.data()[i].tanh());
        self.push(v, Op::Tanh { x: x.0 })
    }

    /// Stacks 2-D parts with equal column counts, top to bottom.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::InvalidArgument(
            "concat_rows needs at least one part".into(),
        ))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, cols],
                    rhs: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ids = Rc::new(parts.iter().map(|v| v.0).collect());
        let v = Tensor::from_vec(vec![rows, cols], data)?;
        Ok(self.push(v, Op::ConcatRows { parts: ids }))
    }

    /// Joins two 2-D tensors side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let v = Tensor::from_vec(vec![rows, ca + cb], data)?;
        Ok(self.push(v, Op::ConcatCols { a: a.0, b: b.0 }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || start + len > tx.rows() || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: tx.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let cols = tx.cols();
        let data = tx.data()[start * cols..(start + len) * cols].to_vec();
        let v = Tensor::from_vec(vec![len, cols], data)?;
        Ok(self.push(v, Op::SliceRows { x: x.0, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || start + len > tx.cols() || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: tx.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let (rows, cols) = (tx.rows(), tx.cols());
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.data()[r * cols + start..r * cols + start + len]);
        }
        let v = Tensor::from_vec(vec![rows, len], data)?;
        Ok(self.push(v, Op::SliceCols { x: x.0, start }))
    }

    /// Tiles a single row `[1, d]` into `[t, d]`.
    pub fn repeat_rows(&mut self, v: Var, t: usize) -> Result<Var> {
        let tv = self.value(v);
        if tv.shape().len() != 2 || tv.rows() != 1 || t == 0 {
            return Err(Error::ShapeMismatch {
                op: "repeat_rows",
                lhs: tv.shape().to_vec(),
                rhs: vec![t],
            });
        }
        let d = tv.cols();
        let row = tv.data().to_vec();
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            data.extend_from_slice(&row);
        }
        let out = Tensor::from_vec(vec![t, d], data)?;
        Ok(self.push(out, Op::RepeatRows { v: v.0 }))
    }

    /// Row-wise softmax; masked entries come out exactly 0.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let v = softmax_masked(self.value(x), mask.as_deref())?;
        Ok(self.push(v, Op::SoftmaxRows { x: x.0 }))
    }

    /// Looks up `table[ids[t]]` for each position, yielding `[len(ids), d]`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: tt.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (rows, d) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in &ids {
            if id >= rows {
                return Err(Error::InvalidTokenId { id, size: rows });
            }
            data.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let v = Tensor::from_vec(vec![ids.len(), d], data)?;
        Ok(self.push(
            v,
            Op::Gather {
                table: table.0,
                ids: Rc::new(ids),
            },
        ))
    }

    /// Sum over positions with `mask[t]` of `−ln(probs[t, targets[t]])`,
    /// clamping probabilities at 1e-12. Returns a scalar node.
    pub fn ce_sum(&mut self, probs: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let tp = self.value(probs);
        if tp.shape().len() != 2 || targets.len() != tp.rows() || mask.len() != tp.rows() {
            return Err(Error::ShapeMismatch {
                op: "ce_sum",
                lhs: tp.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::NoUnmaskedTargets);
        }
        let v = tp.cols();
        let mut sum = 0.0;
        for (t, (&y, &m)) in targets.iter().zip(mask).enumerate() {
            if !m {
                continue;
            }
            if y >= v {
                return Err(Error::InvalidTokenId { id: y, size: v });
            }
            sum -= clamp_prob(tp.at(t, y)).ln();
        }
        Ok(self.push(
            Tensor::scalar(sum),
            Op::CeSum {
                probs: probs.0,
                targets: Rc::new(targets.to_vec()),
                mask: Rc::new(mask.to_vec()),
            },
        ))
    }

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x: x.0 })
    }

    fn accum(&mut self, idx: usize, contrib: Tensor) {
        match &mut self.nodes[idx].grad {
            Some(g) => {
                for (gi, ci) in g.data_mut().iter_mut().zip(contrib.data()) {
                    *gi += ci;
                }
            }
            None => self.nodes[idx].grad = Some(contrib),
        }
    }

    /// Propagates ∂root/∂node into every node reachable from `root`.
    /// `root` must be a scalar. Node gradients are reset first, so calling
    /// this twice on the same graph recomputes rather than accumulates.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.value(root).shape().to_vec(),
                rhs: vec![1],
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let g = match self.nodes[i].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let da = matmul_nt(&g, &self.nodes[b].value)?;
                    let db = matmul_tn(&self.nodes[a].value, &g)?;
                    self.accum(a, da);
                    self.accum(b, db);
                }
                Op::MatmulNt { a, b } => {
                    // c = a·bᵀ ⇒ da = g·b, db = gᵀ·a
                    let da = matmul(&g, &self.nodes[b].value)?;
                    let db = matmul_tn(&g, &self.nodes[a].value)?;
                    self.accum(a, da);
                    self.accum(b, db);
                }
                Op::Add { a, b } => {
                    self.accum(a, g.clone());
                    self.accum(b, g);
                }
                Op::AddRow { m, v } => {
                    let d = g.cols();
                    let mut dv = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (s, x) in dv.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    self.accum(m, g);
                    self.accum(v, Tensor::from_vec(vec![d], dv)?);
                }
                Op::Mul { a, b } => {
                    let ta = &self.nodes[a].value;
                    let tb = &self.nodes[b].value;
                    let da = Tensor::from_fn(g.shape(), |i| g.data()[i] * tb.data()[i]);
                    let db = Tensor::from_fn(g.shape(), |i| g.data()[i] * ta.data()[i]);
                    self.accum(a, da);
                    self.accum(b, db);
                }
                Op::Scale { x, c } => {
                    let dx = Tensor::from_fn(g.shape(), |i| g.data()[i] * c);
                    self.accum(x, dx);
                }
                Op::Sigmoid { x } => {
                    let y = &self.nodes[i].value;
                    let dx = Tensor::from_fn(g.shape(), |j| {
                        let yj = y.data()[j];
                        g.data()[j] * yj * (1.0 - yj)
                    });
                    self.accum(x, dx);
                }
                Op::Tanh { x } => {
                    let y = &self.nodes[i].value;
                    let dx = Tensor::from_fn(g.shape(), |j| {
                        let yj = y.data()[j];
                        g.data()[j] * (1.0 - yj * yj)
                    });
                    self.accum(x, dx);
                }
                Op::ConcatRows { parts } => {
                    let cols = g.cols();
                    let mut row = 0;
                    for &p in parts.iter() {
                        let rows = self.nodes[p].value.rows();
                        let chunk =
                            g.data()[row * cols..(row + rows) * cols].to_vec();
                        self.accum(p, Tensor::from_vec(vec![rows, cols], chunk)?);
                        row += rows;
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.nodes[a].value.cols();
                    let cb = self.nodes[b].value.cols();
                    let rows = g.rows();
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut db = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let grow = &g.data()[r * (ca + cb)..(r + 1) * (ca + cb)];
                        da.extend_from_slice(&grow[..ca]);
                        db.extend_from_slice(&grow[ca..]);
                    }
                    self.accum(a, Tensor::from_vec(vec![rows, ca], da)?);
                    self.accum(b, Tensor::from_vec(vec![rows, cb], db)?);
                }
                Op::SliceRows { x, start } => {
                    let shape = self.nodes[x].value.shape().to_vec();
                    let cols = shape[1];
                    let mut dx = Tensor::zeros(&shape);
                    dx.data_mut()[start * cols..start * cols + g.len()]
                        .copy_from_slice(g.data());
                    self.accum(x, dx);
                }
                Op::SliceCols { x, start } => {
                    let shape = self.nodes[x].value.shape().to_vec();
                    let (cols, len) = (shape[1], g.cols());
                    let mut dx = Tensor::zeros(&shape);
                    for r in 0..g.rows() {
                        dx.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    self.accum(x, dx);
                }
                Op::RepeatRows { v } => {
                    let d = g.cols();
                    let mut dv = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (s, x) in dv.iter_mut().zip(row) {
                            *s += x;
                        }
                    }
                    self.accum(v, Tensor::from_vec(vec![1, d], dv)?);
                }
                Op::SoftmaxRows { x } => {
                    // dX_j = y_j·(g_j − Σ_k g_k·y_k); masked entries have y=0.
                    let y = &self.nodes[i].value;
                    let n = *y.shape().last().unwrap();
                    let mut dx = vec![0.0; y.len()];
                    for (r, (yrow, grow)) in y
                        .data()
                        .chunks_exact(n)
                        .zip(g.data().chunks_exact(n))
                        .enumerate()
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    self.accum(x, Tensor::from_vec(y.shape().to_vec(), dx)?);
                }
                Op::Gather { table, ids } => {
                    let shape = self.nodes[table].value.shape().to_vec();
                    let d = shape[1];
                    let mut dt = Tensor::zeros(&shape);
                    for (t, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt.data_mut()[id * d + j] += g.data()[t * d + j];
                        }
                    }
                    self.accum(table, dt);
                }
                Op::CeSum {
                    probs,
                    targets,
                    mask,
                } => {
                    let gout = g.item();
                    let tp = &self.nodes[probs].value;
                    let v = tp.cols();
                    let mut dp = Tensor::zeros(tp.shape());
                    for (t, (&y, &m)) in targets.iter().zip(mask.iter()).enumerate() {
                        if m {
                            let p = clamp_prob(tp.at(t, y));
                            dp.data_mut()[t * v + y] = -gout / p;
                        }
                    }
                    self.accum(probs, dp);
                }
                Op::SumAll { x } => {
                    let gout = g.item();
                    let shape = self.nodes[x].value.shape().to_vec();
                    self.accum(x, Tensor::from_fn(&shape, |_| gout));
                }
            }
        }
        Ok(())
    }
}

/// One coordinate whose analytic and numeric gradients disagree beyond `tol`.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of [`grad_check`]: worst relative error plus every failing coordinate.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` against central finite differences,
/// element by element. `f` receives one graph leaf per parameter, in order,
/// and must return a scalar node.
pub fn grad_check<F>(
    params: &[Parameter],
    f: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("grad_check eps must be > 0".into()));
    }
    let base: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let analytic: Vec<Option<Tensor>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = base.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.backward(loss)?;
        vars.iter().map(|&v| g.grad(v).cloned()).collect()
    };

    let loss_at = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::default();
    for (pi, p) in params.iter().enumerate() {
        for e in 0..p.value.len() {
            let mut plus = base.to_vec();
            plus[pi].data_mut()[e] += eps;
            let mut minus = base.to_vec();
            minus[pi].data_mut()[e] -= eps;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * eps);
            let a = analytic[pi].as_ref().map_or(0.0, |t| t.data()[e]);
            let r = rel_err(a, numeric);
            report.checked += 1;
            if r > report.max_rel_err {
                report.max_rel_err = r;
            }
            if r > tol {
                report.failures.push(GradCheckFailure {
                    param: p.name.clone(),
                    index: e,
                    analytic: a,
                    numeric,
                    rel_err: r,
                });
            }
        }
    }
    Ok(report)
}
