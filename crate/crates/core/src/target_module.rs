//! Target Module: a one-layer encoder over the candidate-keyed behavior
//! subsequence and a single-query decoder driven by the projected candidate.

use std::ops::Range;

use rand::Rng;

use crate::attention::MultiHeadAttention;
use crate::embedding::{Embedder, Field};
use crate::error::{DginError, Result};
use crate::group_module::fill_with_null;
use crate::numerics::{AttentionBlock, Init, ParamId, ParamSet, Tape, ValueGrid, Var, LAYER_NORM_EPS};

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl NormParams {
    fn register(prefix: &str, width: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            gain: params.register(format!("{prefix}.gain"), 1, width, Init::Ones, rng)?,
            shift: params.register(format!("{prefix}.shift"), 1, width, Init::Zeros, rng)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let s = tape.param(self.shift);
        tape.layer_norm(x, g, s, LAYER_NORM_EPS)
    }
}

/// `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    fn register(prefix: &str, width: usize, hidden: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            w1: params.register(format!("{prefix}.w1"), width, hidden, Init::Glorot, rng)?,
            b1: params.register(format!("{prefix}.b1"), 1, hidden, Init::Zeros, rng)?,
            w2: params.register(format!("{prefix}.w2"), hidden, width, Init::Glorot, rng)?,
            b2: params.register(format!("{prefix}.b2"), 1, width, Init::Zeros, rng)?,
        })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            tape.param(self.w1),
            tape.param(self.b1),
            tape.param(self.w2),
            tape.param(self.b2),
        );
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2)?;
        tape.add_bias(o, b2)
    }
}

#[derive(Debug, Clone)]
pub struct TargetModule {
    /// `m·d`.
    pub width: usize,
    pub candidate_width: usize,
    pub encoder_attention: MultiHeadAttention,
    pub encoder_norm1: NormParams,
    pub encoder_ffn: FeedForward,
    pub encoder_norm2: NormParams,
    pub projection_w: ParamId,
    pub projection_b: ParamId,
    pub decoder_attention: MultiHeadAttention,
    pub decoder_norm1: NormParams,
    pub decoder_ffn: FeedForward,
    pub decoder_norm2: NormParams,
    pub null_decision: ParamId,
}

/// Eager result for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct TmOutput {
    pub interest_tm: ValueGrid,
    /// `LN(e_t + MHSA(e_t))` over the unmasked rows; empty when `is_null`.
    pub out_mhsa: ValueGrid,
    pub out_enc: ValueGrid,
    pub is_null: bool,
}

impl TargetModule {
    pub fn register(embedder: &Embedder, heads: usize, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        let d = embedder.dim();
        let width = Field::BEHAVIOR.len() * d;
        let candidate_width = Field::CANDIDATE.len() * d;
        Ok(Self {
            width,
            candidate_width,
            encoder_attention: MultiHeadAttention::register("tm.enc.mhsa", heads, width, width, width, params, rng)?,
            encoder_norm1: NormParams::register("tm.enc.ln1", width, params, rng)?,
            encoder_ffn: FeedForward::register("tm.enc.ffn", width, 2 * width, params, rng)?,
            encoder_norm2: NormParams::register("tm.enc.ln2", width, params, rng)?,
            projection_w: params.register("tm.proj.w", candidate_width, width, Init::Glorot, rng)?,
            projection_b: params.register("tm.proj.b", 1, width, Init::Zeros, rng)?,
            decoder_attention: MultiHeadAttention::register("tm.dec.mhta", heads, width, width, width, params, rng)?,
            decoder_norm1: NormParams::register("tm.dec.ln1", width, params, rng)?,
            decoder_ffn: FeedForward::register("tm.dec.ffn", width, 2 * width, params, rng)?,
            decoder_norm2: NormParams::register("tm.dec.ln2", width, params, rng)?,
            null_decision: params.register("tm.null_decision", 1, width, Init::Glorot, rng)?,
        })
    }

    /// Encoder over stacked subsequences; `segments` delimit independent ones.
    /// Returns `(out_mhsa, out_enc)`.
    pub fn encode(&self, tape: &mut Tape<'_>, e_t: Var, segments: &[Range<usize>]) -> Result<(Var, Var)> {
        let a = self.encoder_attention.self_attention(tape, e_t, segments)?;
        let x = tape.add(e_t, a)?;
        let out_mhsa = self.encoder_norm1.apply(tape, x)?;
        let f = self.encoder_ffn.apply(tape, out_mhsa)?;
        let y = tape.add(out_mhsa, f)?;
        let out_enc = self.encoder_norm2.apply(tape, y)?;
        Ok((out_mhsa, out_enc))
    }

    pub fn project(&self, tape: &mut Tape<'_>, candidates: Var) -> Result<Var> {
        let w = tape.param(self.projection_w);
        let b = tape.param(self.projection_b);
        let p = tape.matmul(candidates, w)?;
        tape.add_bias(p, b)
    }

    /// Decoder for each candidate row over its range of `out_enc` rows.
    /// Empty ranges receive the learned null-decision vector.
    pub fn decode(
        &self,
        tape: &mut Tape<'_>,
        out_enc: Option<Var>,
        candidates: Var,
        ranges: &[Range<usize>],
    ) -> Result<Var> {
        let present: Vec<usize> = (0..ranges.len()).filter(|&i| !ranges[i].is_empty()).collect();
        let null = tape.param(self.null_decision);
        let decoded = match (out_enc, present.is_empty()) {
            (Some(enc), false) => {
                let c = tape.select_rows(candidates, present.clone());
                let q = self.project(tape, c)?;
                let blocks = present
                    .iter()
                    .enumerate()
                    .map(|(qi, &i)| AttentionBlock {
                        queries: qi..qi + 1,
                        keys: ranges[i].clone(),
                    })
                    .collect();
                let m = self.decoder_attention.forward(tape, q, enc, blocks)?;
                let y = tape.add(q, m)?;
                let y = self.decoder_norm1.apply(tape, y)?;
                let f = self.decoder_ffn.apply(tape, y)?;
                let z = tape.add(y, f)?;
                Some(self.decoder_norm2.apply(tape, z)?)
            }
            _ => None,
        };
        Ok(fill_with_null(tape, decoded, null, ranges.len(), &present))
    }

    /// Eager forward for one candidate over a padded subsequence.
    pub fn tm_forward(
        &self,
        params: &ParamSet,
        e_t: &ValueGrid,
        seq_mask: &[bool],
        candidate: &ValueGrid,
    ) -> Result<TmOutput> {
        if e_t.cols() != self.width || seq_mask.len() != e_t.rows() {
            return Err(DginError::Dimension {
                op: "tm_forward",
                left: e_t.shape(),
                right: (seq_mask.len(), self.width),
            });
        }
        if candidate.shape() != (1, self.candidate_width) {
            return Err(DginError::Dimension {
                op: "tm_forward candidate",
                left: candidate.shape(),
                right: (1, self.candidate_width),
            });
        }
        let live: Vec<usize> = (0..e_t.rows()).filter(|&r| seq_mask[r]).collect();
        let mut tape = Tape::new(params);
        let c = tape.constant(candidate.clone());
        if live.is_empty() {
            let out = self.decode(&mut tape, None, c, std::slice::from_ref(&(0..0)))?;
            return Ok(TmOutput {
                interest_tm: tape.value(out).clone(),
                out_mhsa: ValueGrid::zeros(0, self.width),
                out_enc: ValueGrid::zeros(0, self.width),
                is_null: true,
            });
        }
        let x = tape.constant(e_t.clone());
        let x = tape.select_rows(x, live.clone());
        let rows = 0..live.len();
        let whole = std::slice::from_ref(&rows);
        let (out_mhsa, out_enc) = self.encode(&mut tape, x, whole)?;
        let out = self.decode(&mut tape, Some(out_enc), c, whole)?;
        Ok(TmOutput {
            interest_tm: tape.value(out).clone(),
            out_mhsa: tape.value(out_mhsa).clone(),
            out_enc: tape.value(out_enc).clone(),
            is_null: false,
        })
    }

    /// Eager linear bridge `D_c → m·d`.
    pub fn project_candidate(&self, params: &ParamSet, candidate: &ValueGrid) -> Result<ValueGrid> {
        let mut tape = Tape::new(params);
        let c = tape.constant(candidate.clone());
        let p = self.project(&mut tape, c)?;
        Ok(tape.value(p).clone())
    }
}
