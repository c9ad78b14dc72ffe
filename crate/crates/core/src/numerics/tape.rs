//! Reverse-mode differentiation over [`ValueGrid`] operations.
//!
//! A [`Tape`] borrows a [`ParamSet`] immutably, records every operation of a
//! forward pass, and [`Tape::backward`] walks the record in reverse to produce
//! [`Gradients`]. Parameter gradients are applied with
//! [`Gradients::accumulate_into`] once the tape has been dropped.

use std::collections::HashMap;
use std::ops::Range;

use super::grid::ValueGrid;
use super::kernels::{self, AttentionBlock, AttentionCache, LayerNormCache};
use super::params::{ParamId, ParamSet};
use crate::error::{DginError, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Gather {
        param: ParamId,
        rows: Vec<usize>,
    },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    MeanRows(Var),
    SegmentMean(Var, Vec<Range<usize>>),
    SumAll(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        cache: LayerNormCache,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        blocks: Vec<AttentionBlock>,
        cache: AttentionCache,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) | Op::Gather { .. } => Vec::new(),
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::SelectRows(a, _)
            | Op::SliceCols(a, _)
            | Op::MeanRows(a)
            | Op::SegmentMean(a, _)
            | Op::SumAll(a)
            | Op::Softmax(a) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::LayerNorm { x, gain, shift, .. } => vec![*x, *gain, *shift],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::BceWithLogits { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Option<ValueGrid>,
    op: Op,
    /// Whether any parameter lies upstream.
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ValueGrid {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(g), _) => g,
            (None, Op::Param(id)) => &self.params.get(*id).grid,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: ValueGrid, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite activation");
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) | Op::Gather { .. } => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: ValueGrid) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Rows of an embedding parameter; gradients scatter back into those rows only.
    pub fn gather(&mut self, param: ParamId, rows: Vec<usize>) -> Var {
        let table = &self.params.get(param).grid;
        let mut out = ValueGrid::zeros(rows.len(), table.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(out, Op::Gather { param, rows })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `1×q` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(DginError::Dimension {
                op: "add_bias",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.values()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(DginError::Dimension {
                op,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let values = av.values().iter().zip(bv.values()).map(|(x, y)| x * y).collect();
        let out = ValueGrid::from_vec(av.rows(), av.cols(), values)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = ValueGrid::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(DginError::Dimension {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: pv.shape(),
                });
            }
            for r in 0..rows {
                out.row_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row(r));
            }
            c0 += pv.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut values = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(DginError::Dimension {
                    op: "concat_rows",
                    left: (rows, cols),
                    right: pv.shape(),
                });
            }
            values.extend_from_slice(pv.values());
            rows += pv.rows();
        }
        let out = ValueGrid::from_vec(rows, cols, values)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Output row `i` is input row `rows[i]`; indices may repeat.
    pub fn select_rows(&mut self, a: Var, rows: Vec<usize>) -> Var {
        let av = self.value(a);
        let mut out = ValueGrid::zeros(rows.len(), av.cols());
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(av.row(r));
        }
        self.push(out, Op::SelectRows(a, rows))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).col_slice(start, len);
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(DginError::Precondition("mean over zero rows".into()));
        }
        let mut out = ValueGrid::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, x) in out.values_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        let n = av.rows() as f64;
        out.values_mut().iter_mut().for_each(|x| *x /= n);
        Ok(self.push(out, Op::MeanRows(a)))
    }

    /// One mean row per segment of `a`'s rows.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let av = self.value(a);
        let mut out = ValueGrid::zeros(segments.len(), av.cols());
        for (g, seg) in segments.iter().enumerate() {
            if seg.is_empty() || seg.end > av.rows() {
                return Err(DginError::Precondition(format!(
                    "segment {seg:?} is empty or outside {} rows",
                    av.rows()
                )));
            }
            let o = out.row_mut(g);
            for r in seg.clone() {
                for (x, y) in o.iter_mut().zip(av.row(r)) {
                    *x += y;
                }
            }
            let n = seg.len() as f64;
            o.iter_mut().for_each(|x| *x /= n);
        }
        Ok(self.push(out, Op::SegmentMean(a, segments)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(ValueGrid::scalar(s), Op::SumAll(a))
    }

    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[Vec<bool>]>) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(a), mask)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (out, cache) = kernels::layer_norm_forward(self.value(x), self.value(gain), self.value(shift), eps)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, shift, cache }))
    }

    /// Multi-head attention core; see [`kernels::attention_forward`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, blocks: Vec<AttentionBlock>) -> Result<Var> {
        let (out, cache) = kernels::attention_forward(self.value(q), self.value(k), self.value(v), heads, &blocks)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                blocks,
                cache,
            },
        ))
    }

    /// Mean negative log-likelihood of `labels` under `sigmoid(logits)`, with the
    /// probability clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.cols() != 1 || lv.rows() != labels.len() || labels.is_empty() {
            return Err(DginError::Dimension {
                op: "bce_with_logits",
                left: lv.shape(),
                right: (labels.len(), 1),
            });
        }
        let probs: Vec<f64> = lv.values().iter().map(|&z| sigmoid(z)).collect();
        let loss = crate::model::metrics::batch_loss(&probs, labels)?;
        Ok(self.push(
            ValueGrid::scalar(loss),
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(DginError::Usage(
                "gradient requested before a forward pass recorded the loss".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(DginError::Usage(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<ValueGrid>> = (0..=loss.0).map(|_| None).collect();
        let mut param_grads: Vec<Option<ValueGrid>> = vec![None; self.params.len()];
        grads[loss.0] = Some(ValueGrid::scalar(1.0));

        let nodes = &self.nodes;
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let wants = |v: Var| nodes[v.0].needs_grad;
            let mut acc = |v: Var, delta: ValueGrid| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    accumulate_param(&mut param_grads, self.params, *id, |pg| pg.add_assign(&g));
                }
                Op::Gather { param, rows } => {
                    accumulate_param(&mut param_grads, self.params, *param, |pg| {
                        for (i, &r) in rows.iter().enumerate() {
                            for (d, x) in pg.row_mut(r).iter_mut().zip(g.row(i)) {
                                *d += x;
                            }
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = g·Bᵀ, dB = Aᵀ·g
                    if wants(*a) {
                        acc(*a, kernels::matmul_a_bt(&g, bv)?);
                    }
                    if wants(*b) {
                        let mut db = ValueGrid::zeros(bv.rows(), bv.cols());
                        kernels::matmul_at_b_acc(av, &g, &mut db);
                        acc(*b, db);
                    }
                }
                Op::AddBias(a, bias) => {
                    let mut db = ValueGrid::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, x) in db.values_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(*bias, db);
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = g.clone();
                    da.values_mut().iter_mut().zip(bv.values()).for_each(|(d, y)| *d *= y);
                    let mut db = g;
                    db.values_mut().iter_mut().zip(av.values()).for_each(|(d, x)| *d *= x);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let mut da = g;
                    da.values_mut().iter_mut().zip(av.values()).for_each(|(d, &x)| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(p, g.col_slice(c0, w));
                        c0 += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        acc(p, g.row_slice(r0, h));
                        r0 += h;
                    }
                }
                Op::SelectRows(a, rows) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = ValueGrid::zeros(ar, ac);
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, x) in da.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += x;
                        }
                    }
                    acc(*a, da);
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = ValueGrid::zeros(ar, ac);
                    for r in 0..ar {
                        da.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(*a, da);
                }
                Op::MeanRows(a) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = ValueGrid::zeros(ar, ac);
                    let inv = 1.0 / ar as f64;
                    for r in 0..ar {
                        for (d, x) in da.row_mut(r).iter_mut().zip(g.values()) {
                            *d = x * inv;
                        }
                    }
                    acc(*a, da);
                }
                Op::SegmentMean(a, segments) => {
                    let (ar, ac) = self.shape(*a);
                    let mut da = ValueGrid::zeros(ar, ac);
                    for (s, seg) in segments.iter().enumerate() {
                        let inv = 1.0 / seg.len() as f64;
                        for r in seg.clone() {
                            for (d, x) in da.row_mut(r).iter_mut().zip(g.row(s)) {
                                *d = x * inv;
                            }
                        }
                    }
                    acc(*a, da);
                }
                Op::SumAll(a) => {
                    let (ar, ac) = self.shape(*a);
                    acc(*a, ValueGrid::filled(ar, ac, g.item()));
                }
                Op::Softmax(a) => {
                    let p = node.value.as_ref().expect("softmax output");
                    let mut da = ValueGrid::zeros(p.rows(), p.cols());
                    for r in 0..p.rows() {
                        kernels::softmax_row_backward(p.row(r), g.row(r), da.row_mut(r));
                    }
                    acc(*a, da);
                }
                Op::LayerNorm { x, gain, shift, cache } => {
                    let (dx, dgain, dshift) = kernels::layer_norm_backward(&g, self.value(*gain), cache);
                    acc(*x, dx);
                    acc(*gain, dgain);
                    acc(*shift, dshift);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    blocks,
                    cache,
                } => {
                    let (dq, dk, dv) = kernels::attention_backward(
                        &g,
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *heads,
                        blocks,
                        cache,
                    );
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::BceWithLogits { logits, labels } => {
                    let lv = self.value(*logits);
                    let n = labels.len() as f64;
                    let scale = g.item() / n;
                    let mut dl = ValueGrid::zeros(lv.rows(), 1);
                    for (i, (&z, &y)) in lv.values().iter().zip(labels).enumerate() {
                        let p = sigmoid(z);
                        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
                        dl.values_mut()[i] = if clamped { 0.0 } else { (p - y) * scale };
                    }
                    acc(*logits, dl);
                }
            }
        }
        Ok(Gradients { param_grads })
    }
}

fn accumulate_param(slots: &mut [Option<ValueGrid>], params: &ParamSet, id: ParamId, f: impl FnOnce(&mut ValueGrid)) {
    let slot = &mut slots[id.index()];
    if slot.is_none() {
        let (r, c) = params.get(id).shape();
        *slot = Some(ValueGrid::zeros(r, c));
    }
    f(slot.as_mut().expect("allocated"));
}

pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    param_grads: Vec<Option<ValueGrid>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the parameter was not on the loss path.
    pub fn param(&self, id: ParamId) -> Option<&ValueGrid> {
        self.param_grads.get(id.index()).and_then(Option::as_ref)
    }

    pub fn accumulate_into(&self, params: &mut ParamSet) {
        for (i, g) in self.param_grads.iter().enumerate() {
            if let Some(g) = g {
                params.get_mut(ParamId(i)).gradient.add_assign(g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::params::Init;

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = ps.register("w", 2, 3, Init::Glorot, &mut rng).unwrap();
        let tape_grads = {
            let mut tape = Tape::new(&ps);
            let wv = tape.param(w);
            let s = tape.sum_all(wv);
            tape.backward(s).unwrap()
        };
        assert_eq!(tape_grads.param(w).unwrap(), &ValueGrid::filled(2, 3, 1.0));
    }

    #[test]
    fn square_gradient_is_twice_value() {
        let mut ps = ParamSet::new();
        ps.insert(crate::numerics::Parameter::new("w", ValueGrid::from_rows(&[vec![3.0]])))
            .unwrap();
        let w = ps.id("w").unwrap();
        let mut tape = Tape::new(&ps);
        let wv = tape.param(w);
        let sq = tape.mul(wv, wv).unwrap();
        let s = tape.sum_all(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(w).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn off_path_parameter_gets_no_gradient() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = ps.register("a", 1, 2, Init::Glorot, &mut rng).unwrap();
        let b = ps.register("b", 1, 2, Init::Glorot, &mut rng).unwrap();
        let mut tape = Tape::new(&ps);
        let av = tape.param(a);
        let _bv = tape.param(b);
        let s = tape.sum_all(av);
        let g = tape.backward(s).unwrap();
        assert!(g.param(b).is_none());
        g.accumulate_into(&mut ps);
        assert_eq!(ps.get(b).gradient, ValueGrid::zeros(1, 2));
    }

    #[test]
    fn backward_on_empty_tape_is_usage_error() {
        let ps = ParamSet::new();
        let tape = Tape::new(&ps);
        assert!(matches!(tape.backward(Var(0)), Err(DginError::Usage(_))));
    }

    #[test]
    fn gather_gradient_is_row_sparse() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = ps.register("emb", 5, 2, Init::Glorot, &mut rng).unwrap();
        let mut tape = Tape::new(&ps);
        let rows = tape.gather(e, vec![3, 1, 3]);
        let s = tape.sum_all(rows);
        let g = tape.backward(s).unwrap();
        let ge = g.param(e).unwrap();
        assert_eq!(ge.row(3), &[2.0, 2.0]);
        assert_eq!(ge.row(1), &[1.0, 1.0]);
        for r in [0, 2, 4] {
            assert_eq!(ge.row(r), &[0.0, 0.0]);
        }
    }

    /// Central differences of `sum(out ⊙ probe)` against the tape's gradient.
    fn fd_check(ps: &mut ParamSet, build: impl Fn(&mut Tape<'_>) -> Var) {
        let probe_loss = |ps: &ParamSet| -> (f64, Gradients) {
            let mut tape = Tape::new(ps);
            let out = build(&mut tape);
            let (r, c) = tape.shape(out);
            let probe =
                ValueGrid::from_vec(r, c, (0..r * c).map(|i| ((i * 7 % 5) as f64 - 1.7) / 3.0).collect()).unwrap();
            let p = tape.constant(probe);
            let y = tape.mul(out, p).unwrap();
            let s = tape.sum_all(y);
            let g = tape.backward(s).unwrap();
            (tape.value(s).item(), g)
        };
        let (_, grads) = probe_loss(ps);
        let ids: Vec<ParamId> = ps.iter().map(|(id, _)| id).collect();
        let h = 1e-6;
        for id in ids {
            let n = ps.get(id).grid.values().len();
            for i in 0..n {
                let orig = ps.get(id).grid.values()[i];
                ps.get_mut(id).grid.values_mut()[i] = orig + h;
                let (up, _) = probe_loss(ps);
                ps.get_mut(id).grid.values_mut()[i] = orig - h;
                let (down, _) = probe_loss(ps);
                ps.get_mut(id).grid.values_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.param(id).map_or(0.0, |g| g.values()[i]);
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                assert!(
                    err < 1e-5,
                    "{} [{i}]: numeric {numeric} analytic {analytic}",
                    ps.get(id).name
                );
            }
        }
    }

    fn random_params(shapes: &[(usize, usize)], seed: u64) -> (ParamSet, Vec<ParamId>) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                ps.register(format!("p{i}"), r, c, Init::Uniform(1.0), &mut rng)
                    .unwrap()
            })
            .collect();
        (ps, ids)
    }

    #[test]
    fn elementwise_and_shape_ops_match_finite_differences() {
        let (mut ps, id) = random_params(&[(3, 4), (4, 2), (1, 2), (3, 2)], 10);
        fd_check(&mut ps, |t| {
            let a = t.param(id[0]);
            let w = t.param(id[1]);
            let b = t.param(id[2]);
            let c = t.param(id[3]);
            let m = t.matmul(a, w).unwrap();
            let m = t.add_bias(m, b).unwrap();
            let m = t.mul(m, c).unwrap();
            let m = t.add(m, c).unwrap();
            let m = t.scale(m, 0.7);
            let r = t.relu(m);
            let both = t.concat_cols(&[r, m]).unwrap();
            let stacked = t.concat_rows(&[both, both]).unwrap();
            let picked = t.select_rows(stacked, vec![5, 0, 0, 2]);
            t.slice_cols(picked, 1, 3)
        });
    }

    #[test]
    fn pooling_ops_match_finite_differences() {
        let (mut ps, id) = random_params(&[(5, 3)], 11);
        fd_check(&mut ps, |t| {
            let a = t.param(id[0]);
            let seg = t.segment_mean(a, vec![0..2, 2..3, 3..5]).unwrap();
            let all = t.mean_rows(a).unwrap();
            t.concat_rows(&[seg, all]).unwrap()
        });
    }

    #[test]
    fn softmax_and_layer_norm_match_finite_differences() {
        let (mut ps, id) = random_params(&[(3, 4), (1, 4), (1, 4)], 12);
        let mask = vec![
            vec![true, false, true, true],
            vec![true; 4],
            vec![false, false, true, false],
        ];
        fd_check(&mut ps, |t| {
            let x = t.param(id[0]);
            let g = t.param(id[1]);
            let s = t.param(id[2]);
            let p = t.softmax_rows(x, Some(&mask)).unwrap();
            let n = t.layer_norm(x, g, s, 1e-5).unwrap();
            t.concat_cols(&[p, n]).unwrap()
        });
    }

    #[test]
    fn attention_matches_finite_differences() {
        let (mut ps, id) = random_params(&[(3, 4), (5, 4), (5, 4)], 13);
        fd_check(&mut ps, |t| {
            let q = t.param(id[0]);
            let k = t.param(id[1]);
            let v = t.param(id[2]);
            let blocks = vec![
                AttentionBlock {
                    queries: 0..2,
                    keys: 0..3,
                },
                AttentionBlock {
                    queries: 2..3,
                    keys: 3..5,
                },
            ];
            t.attention(q, k, v, 2, blocks).unwrap()
        });
    }

    #[test]
    fn gather_and_bce_match_finite_differences() {
        let (mut ps, id) = random_params(&[(4, 1)], 14);
        fd_check(&mut ps, |t| {
            let z = t.gather(id[0], vec![2, 0, 2, 3]);
            t.bce_with_logits(z, &[1.0, 0.0, 0.0, 1.0]).unwrap()
        });
    }
}
