//! Dense kernels shared by the eager API and the tape.
//!
//! Every kernel computes each output row from the corresponding input rows
//! only, in a fixed summation order. Results therefore do not depend on how
//! many other rows are stacked into the same call.

use std::ops::Range;

use super::grid::ValueGrid;
use crate::error::{DginError, Result};

fn check_inner(op: &'static str, a: &ValueGrid, b: &ValueGrid, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(DginError::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

/// `a · b`.
pub fn matmul(a: &ValueGrid, b: &ValueGrid) -> Result<ValueGrid> {
    check_inner("matmul", a, b, a.cols() == b.rows())?;
    let (n, p, q) = (a.rows(), a.cols(), b.cols());
    let mut out = ValueGrid::zeros(n, q);
    let bv = b.values();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate().take(p) {
            if aik == 0.0 {
                continue;
            }
            let brow = &bv[k * q..(k + 1) * q];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b`, accumulated into `out` (shape `a.cols × b.cols`).
pub fn matmul_at_b_acc(a: &ValueGrid, b: &ValueGrid, out: &mut ValueGrid) {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!(out.shape(), (a.cols(), b.cols()));
    let q = b.cols();
    for r in 0..a.rows() {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &ari) in arow.iter().enumerate() {
            if ari == 0.0 {
                continue;
            }
            let orow = out.row_mut(i);
            for j in 0..q {
                orow[j] += ari * brow[j];
            }
        }
    }
}

/// `a · bᵀ`.
pub fn matmul_a_bt(a: &ValueGrid, b: &ValueGrid) -> Result<ValueGrid> {
    check_inner("matmul_a_bt", a, b, a.cols() == b.cols())?;
    matmul(a, &b.transpose())
}

/// Dot product with four interleaved partial sums (lane `k mod 4`), combined
/// as `(s0 + s1) + (s2 + s3)`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for k in 0..4 {
            s[k] += x[k] * y[k];
        }
    }
    for (k, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        s[k] += x * y;
    }
    (s[0] + s[1]) + (s[2] + s[3])
}

/// In-place stabilized softmax of one row over the entries where `keep` is true.
/// Masked entries become exactly zero. Returns false when nothing is kept.
pub fn softmax_in_place(row: &mut [f64], keep: Option<&[bool]>) -> bool {
    let kept = |j: usize| keep.is_none_or(|m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if kept(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if kept(j) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= total;
    }
    true
}

/// Row-wise softmax with an optional mask (true = attend).
pub fn softmax_rows(x: &ValueGrid, mask: Option<&[Vec<bool>]>) -> Result<ValueGrid> {
    if let Some(m) = mask {
        if m.len() != x.rows() || m.iter().any(|r| r.len() != x.cols()) {
            return Err(DginError::Dimension {
                op: "softmax_rows mask",
                left: x.shape(),
                right: (m.len(), m.first().map_or(0, Vec::len)),
            });
        }
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let keep = mask.map(|m| m[r].as_slice());
        if !softmax_in_place(out.row_mut(r), keep) {
            return Err(DginError::DegenerateMask { row: r });
        }
    }
    Ok(out)
}

/// Backward of softmax for one row: `dx = p ∘ (dy − ⟨dy, p⟩)`.
pub fn softmax_row_backward(p: &[f64], dy: &[f64], dx: &mut [f64]) {
    let inner = dot(p, dy);
    for ((d, &pj), &gj) in dx.iter_mut().zip(p).zip(dy) {
        *d += pj * (gj - inner);
    }
}

/// Saved statistics for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: ValueGrid,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_forward(
    x: &ValueGrid,
    gain: &ValueGrid,
    shift: &ValueGrid,
    eps: f64,
) -> Result<(ValueGrid, LayerNormCache)> {
    let m = x.cols();
    if m == 0 {
        return Err(DginError::Precondition("layer norm needs at least one column".into()));
    }
    if gain.shape() != (1, m) || shift.shape() != (1, m) {
        return Err(DginError::Dimension {
            op: "layer_normalize",
            left: x.shape(),
            right: gain.shape(),
        });
    }
    let mut normalized = ValueGrid::zeros(x.rows(), m);
    let mut out = ValueGrid::zeros(x.rows(), m);
    let mut inv_std = Vec::with_capacity(x.rows());
    let (g, b) = (gain.values(), shift.values());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / m as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(r);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * inv;
        }
        let orow = out.row_mut(r);
        for j in 0..m {
            orow[j] = normalized[(r, j)] * g[j] + b[j];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgain, dshift)`.
pub fn layer_norm_backward(
    dy: &ValueGrid,
    gain: &ValueGrid,
    cache: &LayerNormCache,
) -> (ValueGrid, ValueGrid, ValueGrid) {
    let (n, m) = dy.shape();
    let mut dx = ValueGrid::zeros(n, m);
    let mut dgain = ValueGrid::zeros(1, m);
    let mut dshift = ValueGrid::zeros(1, m);
    let g = gain.values();
    let mut dxhat = vec![0.0; m];
    for r in 0..n {
        let dyr = dy.row(r);
        let xhat = cache.normalized.row(r);
        for j in 0..m {
            dgain.values_mut()[j] += dyr[j] * xhat[j];
            dshift.values_mut()[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / m as f64;
        let mean_dx = dot(&dxhat, xhat) / m as f64;
        let inv = cache.inv_std[r];
        let dxr = dx.row_mut(r);
        for j in 0..m {
            dxr[j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    }
    (dx, dgain, dshift)
}

/// One attention block: queries in `queries` attend over keys in `keys`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionBlock {
    pub queries: Range<usize>,
    pub keys: Range<usize>,
}

/// Per-block, per-head attention weights retained for backward.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// `weights[block][head]` has shape `|queries| × |keys|`.
    pub weights: Vec<Vec<ValueGrid>>,
}

fn head_block(g: &ValueGrid, rows: &Range<usize>, col0: usize, width: usize) -> ValueGrid {
    let mut out = ValueGrid::zeros(rows.len(), width);
    for (i, r) in rows.clone().enumerate() {
        out.row_mut(i).copy_from_slice(&g.row(r)[col0..col0 + width]);
    }
    out
}

fn validate_attention(
    q: &ValueGrid,
    k: &ValueGrid,
    v: &ValueGrid,
    heads: usize,
    blocks: &[AttentionBlock],
) -> Result<()> {
    if heads == 0 || !q.cols().is_multiple_of(heads) || !v.cols().is_multiple_of(heads) {
        return Err(DginError::Config(format!(
            "{heads} heads do not divide query width {} and value width {}",
            q.cols(),
            v.cols()
        )));
    }
    if q.cols() != k.cols() {
        return Err(DginError::Dimension {
            op: "attention q/k",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if k.rows() != v.rows() {
        return Err(DginError::Dimension {
            op: "attention k/v",
            left: k.shape(),
            right: v.shape(),
        });
    }
    for b in blocks {
        if b.keys.is_empty() && !b.queries.is_empty() {
            return Err(DginError::Precondition("attention block with no keys".into()));
        }
        if b.queries.end > q.rows() || b.keys.end > k.rows() {
            return Err(DginError::Precondition("attention block out of range".into()));
        }
    }
    Ok(())
}

/// Multi-head scaled dot-product attention over disjoint blocks.
///
/// Columns of `q`/`k` and of `v` are split evenly into `heads` slices; each head
/// computes `softmax(q_h k_hᵀ / sqrt(d_k)) v_h` and the head outputs are laid
/// side by side. Query rows outside every block are left zero.
pub fn attention_forward(
    q: &ValueGrid,
    k: &ValueGrid,
    v: &ValueGrid,
    heads: usize,
    blocks: &[AttentionBlock],
) -> Result<(ValueGrid, AttentionCache)> {
    validate_attention(q, k, v, heads, blocks)?;
    let dk = q.cols() / heads;
    let dv = v.cols() / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = ValueGrid::zeros(q.rows(), v.cols());
    let mut weights = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = head_block(q, &b.queries, h * dk, dk);
            let kh = head_block(k, &b.keys, h * dk, dk);
            let mut s = matmul_a_bt(&qh, &kh)?;
            for r in 0..s.rows() {
                let row = s.row_mut(r);
                row.iter_mut().for_each(|x| *x *= scale);
                softmax_in_place(row, None);
            }
            for (i, qr) in b.queries.clone().enumerate() {
                let prow = s.row(i);
                let orow = &mut out.row_mut(qr)[h * dv..(h + 1) * dv];
                for (j, kr) in b.keys.clone().enumerate() {
                    let p = prow[j];
                    let vrow = &v.row(kr)[h * dv..(h + 1) * dv];
                    for (o, &x) in orow.iter_mut().zip(vrow) {
                        *o += p * x;
                    }
                }
            }
            per_head.push(s);
        }
        weights.push(per_head);
    }
    Ok((out, AttentionCache { weights }))
}

/// Returns `(dq, dk, dv)`.
pub fn attention_backward(
    dout: &ValueGrid,
    q: &ValueGrid,
    k: &ValueGrid,
    v: &ValueGrid,
    heads: usize,
    blocks: &[AttentionBlock],
    cache: &AttentionCache,
) -> (ValueGrid, ValueGrid, ValueGrid) {
    let dk = q.cols() / heads;
    let dvw = v.cols() / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = ValueGrid::zeros(q.rows(), q.cols());
    let mut dkk = ValueGrid::zeros(k.rows(), k.cols());
    let mut dv = ValueGrid::zeros(v.rows(), v.cols());
    for (b, per_head) in blocks.iter().zip(&cache.weights) {
        for (h, p) in per_head.iter().enumerate() {
            let nk = b.keys.len();
            let mut dscore = vec![0.0; nk];
            let mut dp = vec![0.0; nk];
            for (i, qr) in b.queries.clone().enumerate() {
                let prow = p.row(i);
                let dorow = &dout.row(qr)[h * dvw..(h + 1) * dvw];
                for (j, kr) in b.keys.clone().enumerate() {
                    let vrow = &v.row(kr)[h * dvw..(h + 1) * dvw];
                    dp[j] = dot(dorow, vrow);
                    let dvrow = &mut dv.row_mut(kr)[h * dvw..(h + 1) * dvw];
                    for (d, &g) in dvrow.iter_mut().zip(dorow) {
                        *d += prow[j] * g;
                    }
                }
                dscore.iter_mut().for_each(|x| *x = 0.0);
                softmax_row_backward(prow, &dp, &mut dscore);
                let qrow = q.row(qr)[h * dk..(h + 1) * dk].to_vec();
                for (j, kr) in b.keys.clone().enumerate() {
                    let s = dscore[j] * scale;
                    if s == 0.0 {
                        continue;
                    }
                    let krow = &k.row(kr)[h * dk..(h + 1) * dk];
                    let dqrow = &mut dq.row_mut(qr)[h * dk..(h + 1) * dk];
                    for (d, &x) in dqrow.iter_mut().zip(krow) {
                        *d += s * x;
                    }
                    let dkrow = &mut dkk.row_mut(kr)[h * dk..(h + 1) * dk];
                    for (d, &x) in dkrow.iter_mut().zip(&qrow) {
                        *d += s * x;
                    }
                }
            }
        }
    }
    (dq, dkk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_zero() {
        let w = ValueGrid::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&ValueGrid::identity(2), &w).unwrap(), w);
        assert_eq!(matmul(&ValueGrid::zeros(2, 2), &w).unwrap(), ValueGrid::zeros(2, 2));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&ValueGrid::zeros(2, 3), &ValueGrid::zeros(2, 3)).unwrap_err();
        assert!(matches!(
            err,
            DginError::Dimension {
                left: (2, 3),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn softmax_masked_entries_are_zero() {
        let x = ValueGrid::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let mask = vec![vec![true, false, true]];
        let p = softmax_rows(&x, Some(&mask)).unwrap();
        assert_eq!(p[(0, 1)], 0.0);
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_fully_masked_row_errors() {
        let x = ValueGrid::zeros(2, 2);
        let mask = vec![vec![true, true], vec![false, false]];
        assert!(matches!(
            softmax_rows(&x, Some(&mask)),
            Err(DginError::DegenerateMask { row: 1 })
        ));
    }

    #[test]
    fn attention_rows_outside_blocks_stay_zero() {
        let q = ValueGrid::filled(3, 2, 1.0);
        let (out, _) = attention_forward(
            &q,
            &q,
            &q,
            1,
            &[AttentionBlock {
                queries: 0..1,
                keys: 0..2,
            }],
        )
        .unwrap();
        assert_eq!(out.row(2), &[0.0, 0.0]);
        assert_eq!(out.row(0), &[1.0, 1.0]);
    }
}
