//! Neural building blocks: embedding, LSTM, bidirectional wrapper, dense,
//! repeat vector, and scaled dot-product attention.
//!
//! Each layer exists twice: a graph builder (`*_graph` or the [`Graph`]-taking
//! functions) used by the model for training, and a plain tensor-level
//! function that wraps the same builder for direct evaluation, so there is a
//! single implementation of every layer's math.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::vocab::EncodedSeq;

/// Character embedding table, one row per vocabulary id.
#[derive(Debug, Clone)]
pub struct EmbeddingParams {
    pub table: Tensor,
}

/// One LSTM direction. Gate blocks along the 4·d_h axis are ordered
/// (input, forget, cell, output); the checkpoint format depends on this.
#[derive(Debug, Clone)]
pub struct LstmParams {
    /// Input weights `[d_in, 4·d_h]`.
    pub w: Tensor,
    /// Recurrent weights `[d_h, 4·d_h]`.
    pub u: Tensor,
    /// Bias `[4·d_h]`.
    pub b: Tensor,
}

/// Affine map `[d_in] → [d_out]` applied per timestep.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Softmax,
}

/// Attention result: the blended values and the weights that produced them.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub context: Tensor,
    pub weights: Tensor,
}

/// Graph handles for one LSTM direction's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Hidden states of an LSTM walk, ordered by input position.
pub struct LstmTrace {
    /// `states[t]` is h after the cell consumed position `t` (shape `[1, d_h]`).
    pub states: Vec<Var>,
    pub h: Var,
    pub c: Var,
}

fn as_row(t: &Tensor) -> Result<Tensor> {
    if t.shape().len() != 1 {
        return Err(Error::ShapeMismatch {
            op: "state vector",
            lhs: t.shape().to_vec(),
            rhs: vec![t.len()],
        });
    }
    Tensor::from_vec(vec![1, t.len()], t.data().to_vec())
}

fn as_flat(t: &Tensor) -> Tensor {
    Tensor::from_vec(vec![t.len()], t.data().to_vec()).expect("flatten is size-preserving")
}

/// One LSTM cell update given the precomputed input part `zx = x·W + b`.
fn lstm_step(
    g: &mut Graph,
    p: &LstmVars,
    zx: Var,
    h: Var,
    c: Var,
    d_h: usize,
) -> Result<(Var, Var)> {
    let hu = g.matmul(h, p.u)?;
    let z = g.add(zx, hu)?;
    let i = g.slice_cols(z, 0, d_h)?;
    let f = g.slice_cols(z, d_h, d_h)?;
    let cell = g.slice_cols(z, 2 * d_h, d_h)?;
    let o = g.slice_cols(z, 3 * d_h, d_h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cell = g.tanh(cell);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cell)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs an LSTM over the rows of `xs`, in input order or reversed.
/// `h0`/`c0` are `[1, d_h]` rows.
pub fn lstm_graph(
    g: &mut Graph,
    p: &LstmVars,
    xs: Var,
    reverse: bool,
    h0: Var,
    c0: Var,
) -> Result<LstmTrace> {
    let t_len = g.value(xs).rows();
    let d_h = g.value(p.u).rows();
    // input contribution for every step at once; the recurrence only adds h·U
    let zx_all = g.matmul(xs, p.w)?;
    let zx_all = g.add_row(zx_all, p.b)?;
    let (mut h, mut c) = (h0, c0);
    let mut states: Vec<Option<Var>> = vec![None; t_len];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_len).rev())
    } else {
        Box::new(0..t_len)
    };
    for t in order {
        let zx = g.slice_rows(zx_all, t, 1)?;
        let (h2, c2) = lstm_step(g, p, zx, h, c, d_h)?;
        h = h2;
        c = c2;
        states[t] = Some(h);
    }
    Ok(LstmTrace {
        states: states.into_iter().map(|s| s.expect("every step visited")).collect(),
        h,
        c,
    })
}

/// Bidirectional LSTM over positions `0..src_len`; rows at and past `src_len`
/// are exactly zero so padding can never leak downstream.
pub fn bilstm_graph(
    g: &mut Graph,
    fwd: &LstmVars,
    bwd: &LstmVars,
    xs: Var,
    src_len: usize,
) -> Result<Var> {
    let t_total = g.value(xs).rows();
    if src_len == 0 || src_len > t_total {
        return Err(Error::InvalidArgument(format!(
            "source length {src_len} outside 1..={t_total}"
        )));
    }
    let d_h = g.value(fwd.u).rows();
    let used = g.slice_rows(xs, 0, src_len)?;
    let zero = g.leaf(Tensor::zeros(&[1, d_h]));
    let f_trace = lstm_graph(g, fwd, used, false, zero, zero)?;
    let b_trace = lstm_graph(g, bwd, used, true, zero, zero)?;
    let f_rows = g.concat_rows(&f_trace.states)?;
    let b_rows = g.concat_rows(&b_trace.states)?;
    let joined = g.concat_cols(f_rows, b_rows)?;
    if src_len == t_total {
        return Ok(joined);
    }
    let pad = g.leaf(Tensor::zeros(&[t_total - src_len, 2 * d_h]));
    g.concat_rows(&[joined, pad])
}

/// `activation(x·W + b)` applied to every row of `x`.
pub fn dense_graph(
    g: &mut Graph,
    w: Var,
    b: Var,
    x: Var,
    activation: Activation,
) -> Result<Var> {
    let affine = g.matmul(x, w)?;
    let affine = g.add_row(affine, b)?;
    match activation {
        Activation::None => Ok(affine),
        Activation::Softmax => g.softmax_rows(affine, None),
    }
}

/// Scaled dot-product attention: `weights = softmax(Q·Kᵀ/√d)` with `src_mask`
/// hiding padded key positions; `context = weights·V`.
pub fn attention_graph(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    src_mask: &[bool],
) -> Result<(Var, Var)> {
    let d = g.value(q).cols();
    let t_in = g.value(k).rows();
    if src_mask.len() != t_in {
        return Err(Error::ShapeMismatch {
            op: "attention mask",
            lhs: vec![t_in],
            rhs: vec![src_mask.len()],
        });
    }
    if !src_mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "attention mask has no unmasked positions".into(),
        ));
    }
    let t_out = g.value(q).rows();
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let mut full_mask = Vec::with_capacity(t_out * t_in);
    for _ in 0..t_out {
        full_mask.extend_from_slice(src_mask);
    }
    let weights = g.softmax_rows(scores, Some(full_mask))?;
    let context = g.matmul(weights, v)?;
    Ok((context, weights))
}

/// Looks up each id's embedding row; PAD positions embed PAD's row and are
/// masked out downstream.
pub fn embedding_forward(params: &EmbeddingParams, ids: &EncodedSeq) -> Result<Tensor> {
    let mut g = Graph::new();
    let table = g.leaf(params.table.clone());
    let out = g.gather(table, ids.ids.clone())?;
    Ok(g.value(out).clone())
}

/// Full LSTM pass over `inputs: [T, d_in]` from 1-D initial states.
/// Returns the per-step hidden states and the final (h, c).
pub fn lstm_forward(
    params: &LstmParams,
    inputs: &Tensor,
    h0: &Tensor,
    c0: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let mut g = Graph::new();
    let vars = LstmVars {
        w: g.leaf(params.w.clone()),
        u: g.leaf(params.u.clone()),
        b: g.leaf(params.b.clone()),
    };
    let xs = g.leaf(inputs.clone());
    let h0 = g.leaf(as_row(h0)?);
    let c0 = g.leaf(as_row(c0)?);
    let trace = lstm_graph(&mut g, &vars, xs, false, h0, c0)?;
    let seq = g.concat_rows(&trace.states)?;
    Ok((
        g.value(seq).clone(),
        as_flat(g.value(trace.h)),
        as_flat(g.value(trace.c)),
    ))
}

/// Bidirectional encoder pass; output rows at positions ≥ `src_len` are zero.
pub fn bilstm_forward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    inputs: &Tensor,
    src_len: usize,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let fv = LstmVars {
        w: g.leaf(fwd.w.clone()),
        u: g.leaf(fwd.u.clone()),
        b: g.leaf(fwd.b.clone()),
    };
    let bv = LstmVars {
        w: g.leaf(bwd.w.clone()),
        u: g.leaf(bwd.u.clone()),
        b: g.leaf(bwd.b.clone()),
    };
    let xs = g.leaf(inputs.clone());
    let out = bilstm_graph(&mut g, &fv, &bv, xs, src_len)?;
    Ok(g.value(out).clone())
}

/// Tiles a vector into `t_out` identical rows.
pub fn repeat_vector(v: &Tensor, t_out: usize) -> Result<Tensor> {
    if t_out == 0 {
        return Err(Error::InvalidArgument("repeat_vector needs t_out ≥ 1".into()));
    }
    let mut g = Graph::new();
    let row = g.leaf(as_row(v)?);
    let out = g.repeat_rows(row, t_out)?;
    Ok(g.value(out).clone())
}

/// Attention over already-projected sequences; see [`attention_graph`].
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    src_mask: &[bool],
) -> Result<AttentionOutput> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
    let (context, weights) = attention_graph(&mut g, qv, kv, vv, src_mask)?;
    Ok(AttentionOutput {
        context: g.value(context).clone(),
        weights: g.value(weights).clone(),
    })
}

/// Applies the same dense transform to every timestep row.
pub fn time_distributed_dense(
    params: &DenseParams,
    x: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let w = g.leaf(params.w.clone());
    let b = g.leaf(params.b.clone());
    let xv = g.leaf(x.clone());
    let out = dense_graph(&mut g, w, b, xv, activation)?;
    Ok(g.value(out).clone())
}
