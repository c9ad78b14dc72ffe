//! Group Module: intra-group self-attention over member attributes, mean-pooled
//! into the aggregated attribute, then candidate-driven target attention over
//! the interest-group representations.
//!
//! A group row is laid out as `[identity | statistics | aggregated]`; the
//! statistics and aggregated slices are present only when the model variant
//! enables them.

use std::ops::Range;

use rand::Rng;

use crate::attention::{segments, MultiHeadAttention};
use crate::datamodel::Timestamp;
use crate::embedding::{Embedder, Field};
use crate::error::{DginError, Result};
use crate::numerics::{AttentionBlock, Init, ParamId, ParamSet, Tape, ValueGrid, Var};
use crate::store::{GroupedSequence, InterestGroup};

/// Which slices a group row carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupLayout {
    pub identity_width: usize,
    pub stats_width: usize,
    pub aggregated_width: usize,
}

impl GroupLayout {
    pub fn new(embedder: &Embedder, use_stats: bool, use_aggregated: bool) -> Self {
        let d = embedder.dim();
        let schema = embedder.schema();
        Self {
            identity_width: Field::IDENTITY.len() * d,
            stats_width: if use_stats { schema.stat_fields().len() * d } else { 0 },
            aggregated_width: if use_aggregated {
                schema.member_fields().len() * d
            } else {
                0
            },
        }
    }

    /// `D_g`.
    pub fn width(&self) -> usize {
        self.identity_width + self.stats_width + self.aggregated_width
    }

    pub fn identity_range(&self) -> Range<usize> {
        0..self.identity_width
    }

    pub fn stats_range(&self) -> Range<usize> {
        self.identity_width..self.identity_width + self.stats_width
    }

    pub fn aggregated_range(&self) -> Range<usize> {
        let start = self.identity_width + self.stats_width;
        start..start + self.aggregated_width
    }
}

/// Member embeddings of one group plus a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraGroupInput {
    pub e_b: ValueGrid,
    pub member_mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct GroupModule {
    pub layout: GroupLayout,
    /// Absent when the aggregated attribute is disabled.
    pub member_attention: Option<MultiHeadAttention>,
    pub target_attention: MultiHeadAttention,
    pub null_interest: ParamId,
}

impl GroupModule {
    pub fn register(
        embedder: &Embedder,
        heads: usize,
        use_stats: bool,
        use_aggregated: bool,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layout = GroupLayout::new(embedder, use_stats, use_aggregated);
        let member_width = embedder.schema().member_fields().len() * embedder.dim();
        let member_attention = if use_aggregated {
            Some(MultiHeadAttention::register(
                "gm.mhsa",
                heads,
                member_width,
                member_width,
                member_width,
                params,
                rng,
            )?)
        } else {
            None
        };
        let candidate_width = Field::CANDIDATE.len() * embedder.dim();
        let target_attention = MultiHeadAttention::register(
            "gm.mhta",
            heads,
            candidate_width,
            layout.width(),
            layout.width(),
            params,
            rng,
        )?;
        let null_interest = params.register("gm.null_interest", 1, layout.width(), Init::Glorot, rng)?;
        Ok(Self {
            layout,
            member_attention,
            target_attention,
            null_interest,
        })
    }

    /// Group-row representations `e_g` for `groups`, one row each, in order.
    pub fn group_rows(
        &self,
        tape: &mut Tape<'_>,
        embedder: &Embedder,
        groups: &[&InterestGroup],
        as_of: Timestamp,
    ) -> Result<Var> {
        let mut parts = vec![embedder.embed_identity(tape, groups)?];
        if self.layout.stats_width > 0 {
            parts.push(embedder.embed_stats(tape, groups)?);
        }
        if let Some(mhsa) = &self.member_attention {
            let members: Vec<_> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
            let e_b = embedder.embed_members(tape, &members, as_of)?;
            let segs = segments(groups.iter().map(|g| g.members.len()));
            let refined = mhsa.self_attention(tape, e_b, &segs)?;
            parts.push(tape.segment_mean(refined, segs)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            tape.concat_cols(&parts)
        }
    }

    /// Target attention from each candidate row over its own range of group rows.
    /// Candidates whose range is empty receive the learned null interest.
    pub fn interest(
        &self,
        tape: &mut Tape<'_>,
        candidates: Var,
        group_rows: Option<Var>,
        ranges: &[Range<usize>],
    ) -> Result<Var> {
        let with_groups: Vec<usize> = (0..ranges.len()).filter(|&i| !ranges[i].is_empty()).collect();
        let null = tape.param(self.null_interest);
        let attended = match (group_rows, with_groups.is_empty()) {
            (Some(rows), false) => {
                let q = tape.select_rows(candidates, with_groups.clone());
                let blocks = with_groups
                    .iter()
                    .enumerate()
                    .map(|(qi, &i)| AttentionBlock {
                        queries: qi..qi + 1,
                        keys: ranges[i].clone(),
                    })
                    .collect();
                Some(self.target_attention.forward(tape, q, rows, blocks)?)
            }
            _ => None,
        };
        Ok(fill_with_null(tape, attended, null, ranges.len(), &with_groups))
    }

    /// Eager intra-group self-attention. Masked rows come back zeroed.
    pub fn mhsa(&self, params: &ParamSet, input: &IntraGroupInput) -> Result<ValueGrid> {
        let mhsa = self
            .member_attention
            .as_ref()
            .ok_or_else(|| DginError::Config("aggregated attribute disabled".into()))?;
        if input.e_b.cols() != mhsa.model_width || input.member_mask.len() != input.e_b.rows() {
            return Err(DginError::Dimension {
                op: "mhsa",
                left: input.e_b.shape(),
                right: (input.member_mask.len(), mhsa.model_width),
            });
        }
        let live: Vec<usize> = (0..input.e_b.rows()).filter(|&r| input.member_mask[r]).collect();
        if live.is_empty() {
            return Err(DginError::Precondition("group has no unmasked member".into()));
        }
        let mut tape = Tape::new(params);
        let x = tape.constant(input.e_b.clone());
        let x = tape.select_rows(x, live.clone());
        let whole = 0..live.len();
        let out = mhsa.self_attention(&mut tape, x, std::slice::from_ref(&whole))?;
        let compact = tape.value(out);
        let mut full = ValueGrid::zeros(input.e_b.rows(), mhsa.model_width);
        for (i, &r) in live.iter().enumerate() {
            full.row_mut(r).copy_from_slice(compact.row(i));
        }
        Ok(full)
    }

    /// Eager `e_g` for a grouped view, padded to `max_groups` rows with a mask.
    pub fn build_group_matrix(
        &self,
        params: &ParamSet,
        embedder: &Embedder,
        grouped: &GroupedSequence,
        as_of: Timestamp,
        max_groups: usize,
    ) -> Result<(ValueGrid, Vec<bool>)> {
        if grouped.group_count() > max_groups {
            return Err(DginError::Precondition(format!(
                "{} groups exceed G = {max_groups}",
                grouped.group_count()
            )));
        }
        let mut e_g = ValueGrid::zeros(max_groups, self.layout.width());
        let mut mask = vec![false; max_groups];
        if grouped.group_count() > 0 {
            let refs: Vec<&InterestGroup> = grouped.groups.iter().collect();
            let mut tape = Tape::new(params);
            let rows = self.group_rows(&mut tape, embedder, &refs, as_of)?;
            let rv = tape.value(rows);
            for (r, live) in mask.iter_mut().enumerate().take(rv.rows()) {
                e_g.row_mut(r).copy_from_slice(rv.row(r));
                *live = true;
            }
        }
        Ok((e_g, mask))
    }

    /// Eager target attention for one candidate over a padded `e_g`.
    pub fn mhta_gm(
        &self,
        params: &ParamSet,
        candidate: &ValueGrid,
        e_g: &ValueGrid,
        mask: &[bool],
    ) -> Result<ValueGrid> {
        if candidate.shape() != (1, self.target_attention.query_width) || e_g.cols() != self.layout.width() {
            return Err(DginError::Dimension {
                op: "mhta_gm",
                left: candidate.shape(),
                right: e_g.shape(),
            });
        }
        let live: Vec<usize> = (0..e_g.rows()).filter(|&r| mask[r]).collect();
        let mut tape = Tape::new(params);
        let c = tape.constant(candidate.clone());
        let g = tape.constant(e_g.clone());
        let g = tape.select_rows(g, live.clone());
        let whole = 0..live.len();
        let out = self.interest(&mut tape, c, Some(g), std::slice::from_ref(&whole))?;
        Ok(tape.value(out).clone())
    }
}

/// Mean over unmasked rows.
pub fn aggregate(mhsa_out: &ValueGrid, mask: &[bool]) -> Result<ValueGrid> {
    let live: Vec<usize> = (0..mhsa_out.rows()).filter(|&r| mask[r]).collect();
    if live.is_empty() {
        return Err(DginError::Precondition("mean pooling over a fully masked group".into()));
    }
    let mut out = ValueGrid::zeros(1, mhsa_out.cols());
    for &r in &live {
        for (o, v) in out.values_mut().iter_mut().zip(mhsa_out.row(r)) {
            *o += v;
        }
    }
    let n = live.len() as f64;
    out.values_mut().iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Rows `present[i]` take row `i` of `computed`; every other row is `null`.
pub(crate) fn fill_with_null(
    tape: &mut Tape<'_>,
    computed: Option<Var>,
    null: Var,
    total: usize,
    present: &[usize],
) -> Var {
    let stack = match computed {
        Some(c) => tape
            .concat_rows(&[c, null])
            .expect("computed rows and null share a width"),
        None => null,
    };
    let null_row = present.len();
    let mut index = vec![null_row; total];
    for (k, &i) in present.iter().enumerate() {
        index[i] = k;
    }
    tape.select_rows(stack, index)
}
