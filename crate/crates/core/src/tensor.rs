//! Dense row-major 64-bit float tensors and named trainable parameters.
//!
//! This is the storage substrate for the model. Differentiable computation
//! lives in [`crate::graph`]; the free functions here are the plain value-level
//! operations, which the graph reuses for its forward passes.

use crate::error::{Error, Result};

/// Dense multi-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and a row-major buffer.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single element of a scalar (length-1) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Number of rows when viewed as a matrix of `[rows, cols]`.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    /// Element access for 2-D tensors.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the maximum entry in each row of a 2-D tensor.
    /// Ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        self.data
            .chunks_exact(cols)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

fn check_matmul(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok((a.shape()[0], a.shape()[1], b.shape()[1]))
}

/// Matrix product of `a: [m,k]` and `b: [k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = check_matmul(a, b)?;
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(vec![m, n], out)
}

/// `a · bᵀ` without materializing the transpose. `a: [m,n]`, `b: [k,n]` → `[m,k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a.data()[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b.data()[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::from_vec(vec![m, k], out)
}

/// `aᵀ · b` without materializing the transpose. `a: [m,k]`, `b: [m,n]` → `[k,n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        let brow = &b.data()[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec(vec![k, n], out)
}

/// Row-wise softmax over the last axis, numerically stabilized by
/// max-subtraction. `mask`, when present, must have the same element count as
/// `x`; masked entries come out exactly 0 and each row renormalizes over its
/// unmasked entries.
pub fn softmax_masked(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let shape = x.shape();
    if shape.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "softmax",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax mask",
                lhs: shape.to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    let n = *shape.last().unwrap();
    let mut out = vec![0.0; x.len()];
    for (row_idx, (row, orow)) in x
        .data()
        .chunks_exact(n)
        .zip(out.chunks_exact_mut(n))
        .enumerate()
    {
        let mrow = mask.map(|m| &m[row_idx * n..(row_idx + 1) * n]);
        let keep = |j: usize| mrow.map_or(true, |m| m[j]);
        let mut max = f64::NEG_INFINITY;
        let mut any_kept = false;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                any_kept = true;
                if v > max {
                    max = v;
                }
            }
        }
        if !any_kept {
            return Err(Error::FullyMaskedRow { row: row_idx });
        }
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Tensor::from_vec(shape.to_vec(), out)
}

/// Floor applied to probabilities before taking logs in the cross entropy.
pub const PROB_CLAMP: f64 = 1e-12;

/// Clamps a probability from below; NaN passes through untouched so a
/// diverged model cannot masquerade as a finite loss.
pub(crate) fn clamp_prob(p: f64) -> f64 {
    if p < PROB_CLAMP {
        PROB_CLAMP
    } else {
        p
    }
}

/// Bookkeeping from a cross-entropy evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CeStats {
    /// Target positions that contributed to the mean.
    pub positions: usize,
    /// Positions where the target probability hit the [`PROB_CLAMP`] floor.
    pub clamped: usize,
}

/// Mean of `−ln(probs[target])` over positions whose target is not `pad_id`.
///
/// `probs` is `[T, V]` or `[B, T, V]`; `targets` is one row of ids per
/// sequence. PAD-targeted positions contribute nothing. Zero probabilities are
/// clamped at [`PROB_CLAMP`] and counted in the returned stats rather than
/// raised as errors.
pub fn masked_cross_entropy(
    probs: &Tensor,
    targets: &[Vec<usize>],
    pad_id: usize,
) -> Result<(f64, CeStats)> {
    let shape = probs.shape();
    let (batch, t_len, v) = match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: shape.to_vec(),
                rhs: vec![],
            })
        }
    };
    if targets.len() != batch || targets.iter().any(|row| row.len() != t_len) {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy targets",
            lhs: shape.to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let mut sum = 0.0;
    let mut stats = CeStats::default();
    for (b, row) in targets.iter().enumerate() {
        for (t, &y) in row.iter().enumerate() {
            if y == pad_id {
                continue;
            }
            if y >= v {
                return Err(Error::InvalidTokenId { id: y, size: v });
            }
            let p = probs.data()[(b * t_len + t) * v + y];
            if p < PROB_CLAMP {
                stats.clamped += 1;
            }
            sum -= clamp_prob(p).ln();
            stats.positions += 1;
        }
    }
    if stats.positions == 0 {
        return Err(Error::NoUnmaskedTargets);
    }
    Ok((sum / stats.positions as f64, stats))
}
