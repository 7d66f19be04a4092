//! Multi-head attention with learned relative-position embeddings.
//!
//! Relative logits use the memory-efficient skew: one (L x R) matmul against
//! the gathered embedding rows, then a pad/reshape/slice that lines entry
//! (i, j) up with distance j - i. Distances beyond the maximum clip to it.

use crate::tensor::{NodeId, Tape};
use ndarray::{ArrayD, IxDyn};

use super::Bound;

/// Parameter indices for one attention block.
#[derive(Debug, Clone)]
pub struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    /// Relative-position table, shared across heads: `(max_rel + 1, d_qk)`
    /// rows for causal self-attention, `(2 max_rel + 1, d_qk)` for
    /// bidirectional. Absent for cross-attention.
    pub rel: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelMode {
    /// Plain dot-product attention (cross-attention over memory).
    None,
    /// Encoder self-attention: distances -max_rel..=max_rel.
    Bidirectional { max_rel: usize },
    /// Decoder self-attention: distances -max_rel..=0.
    Causal { max_rel: usize },
}

/// Table row for each of the `2L - 1` distances `-(L-1)..=(L-1)`, clipped.
pub fn bidirectional_rel_indices(len: usize, max_rel: usize) -> Vec<usize> {
    (0..2 * len - 1)
        .map(|r| {
            let dist = r as i64 - (len as i64 - 1);
            (dist.clamp(-(max_rel as i64), max_rel as i64) + max_rel as i64) as usize
        })
        .collect()
}

/// Table row for each of the `L` causal distances `-(L-1)..=0`, clipped.
/// Row `max_rel` is distance 0.
pub fn causal_rel_indices(len: usize, max_rel: usize) -> Vec<usize> {
    (0..len)
        .map(|r| {
            let dist = r as i64 - (len as i64 - 1);
            (dist.max(-(max_rel as i64)) + max_rel as i64) as usize
        })
        .collect()
}

/// Causal relative logits by skewing: `out[i][j] = q_i . e_{j-i}` for
/// `j <= i`, zero above the diagonal. `rel_rows` holds the gathered
/// embedding for distances `-(L-1)..=0` in order.
pub fn relative_logits_causal(tape: &mut Tape, q: NodeId, rel_rows: NodeId) -> NodeId {
    let len = tape.value(q).shape()[0];
    debug_assert_eq!(tape.value(rel_rows).shape()[0], len);
    let rel_t = tape.transpose(rel_rows);
    let scores = tape.matmul(q, rel_t); // (L, L): [i][r] = q_i . e_r
    let padded = tape.pad(scores, 1, 1, 0); // (L, L+1)
    let reshaped = tape.reshape(padded, &[len + 1, len]);
    let skewed = tape.slice(reshaped, 0, 1, len); // (L, L), upper part garbage
    let tri = lower_triangular_ones(len);
    let mask = tape.constant(tri);
    tape.mul(skewed, mask)
}

/// Bidirectional relative logits by skewing: `out[i][j] = q_i . e_{j-i}`.
/// `rel_rows` holds the gathered embedding for distances `-(L-1)..=(L-1)`.
pub fn relative_logits_bidirectional(tape: &mut Tape, q: NodeId, rel_rows: NodeId) -> NodeId {
    let len = tape.value(q).shape()[0];
    debug_assert_eq!(tape.value(rel_rows).shape()[0], 2 * len - 1);
    let rel_t = tape.transpose(rel_rows);
    let scores = tape.matmul(q, rel_t); // (L, 2L-1)
    let padded = tape.pad(scores, 1, 0, 1); // (L, 2L)
    let flat = tape.reshape(padded, &[2 * len * len]);
    let flat_padded = tape.pad(flat, 0, 0, len - 1); // (2L^2 + L - 1,)
    let reshaped = tape.reshape(flat_padded, &[len + 1, 2 * len - 1]);
    let rows = tape.slice(reshaped, 0, 0, len);
    tape.slice(rows, 1, len - 1, len)
}

fn lower_triangular_ones(len: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[len, len]), |ix| if ix[1] <= ix[0] { 1.0 } else { 0.0 })
}

/// Additive causal mask: 0 at or below the diagonal, -1e9 above.
pub fn causal_mask(len: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[len, len]), |ix| if ix[1] <= ix[0] { 0.0 } else { -1e9 })
}

/// Additive key-padding mask for `(len_q, len_k)` logits: -1e9 on key
/// positions at or beyond `valid`.
pub fn pad_mask(len_q: usize, len_k: usize, valid: usize) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(&[len_q, len_k]), |ix| if ix[1] < valid { 0.0 } else { -1e9 })
}

/// Multi-head attention. Queries come from `x_q` (length Lq), keys and
/// values from `x_kv` (length Lk). Query/key projections are half-width
/// (`d / 2`), split across heads; the relative table is shared by heads.
/// `mask` is added to the scaled logits.
pub fn attention(
    tape: &mut Tape,
    bound: &Bound,
    x_q: NodeId,
    x_kv: NodeId,
    idx: &AttnIdx,
    n_heads: usize,
    rel: RelMode,
    mask: Option<NodeId>,
) -> NodeId {
    let len_q = tape.value(x_q).shape()[0];
    let wq = bound.id(idx.wq);
    let wk = bound.id(idx.wk);
    let wv = bound.id(idx.wv);
    let wo = bound.id(idx.wo);
    let q = tape.matmul(x_q, wq);
    let q = {
        let b = bound.id(idx.bq);
        tape.add(q, b)
    };
    let k = tape.matmul(x_kv, wk);
    let k = {
        let b = bound.id(idx.bk);
        tape.add(k, b)
    };
    let v = tape.matmul(x_kv, wv);
    let v = {
        let b = bound.id(idx.bv);
        tape.add(v, b)
    };
    let d_qk_total = tape.value(q).shape()[1];
    let d_v_total = tape.value(v).shape()[1];
    let d_qk = d_qk_total / n_heads;
    let d_v = d_v_total / n_heads;

    let rel_rows = match rel {
        RelMode::None => None,
        RelMode::Bidirectional { max_rel } => {
            let table = bound.id(idx.rel.expect("bidirectional attention needs a rel table"));
            let indices = bidirectional_rel_indices(len_q, max_rel);
            Some(tape.embed(table, &indices))
        }
        RelMode::Causal { max_rel } => {
            let table = bound.id(idx.rel.expect("causal attention needs a rel table"));
            let indices = causal_rel_indices(len_q, max_rel);
            Some(tape.embed(table, &indices))
        }
    };

    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice(q, 1, h * d_qk, d_qk);
        let kh = tape.slice(k, 1, h * d_qk, d_qk);
        let vh = tape.slice(v, 1, h * d_v, d_v);
        let kt = tape.transpose(kh);
        let content = tape.matmul(qh, kt);
        let logits = match (rel, rel_rows) {
            (RelMode::Bidirectional { .. }, Some(rows)) => {
                let r = relative_logits_bidirectional(tape, qh, rows);
                tape.add(content, r)
            }
            (RelMode::Causal { .. }, Some(rows)) => {
                let r = relative_logits_causal(tape, qh, rows);
                tape.add(content, r)
            }
            _ => content,
        };
        let logits = tape.scale(logits, 1.0 / (d_qk as f64).sqrt());
        let logits = match mask {
            Some(m) => tape.add(logits, m),
            None => logits,
        };
        let weights = tape.softmax(logits);
        heads.push(tape.matmul(weights, vh));
    }
    let ctx = tape.concat(&heads, 1);
    let out = tape.matmul(ctx, wo);
    let b = bound.id(idx.bo);
    tape.add(out, b)
}
