//! Multi-head scaled dot-product attention with learned projections.

use rand::Rng;

use crate::error::{DginError, Result};
use crate::numerics::{AttentionBlock, Init, ParamId, ParamSet, Tape, Var};

/// Projections for `h` heads over a model width `D`.
///
/// `wq`, `wk` and `wv` are stored as single `D_in × D` matrices whose column
/// block `i` (width `D/h`) is head `i`'s projection; `wo` is `D × D`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query_width: usize,
    pub kv_width: usize,
    pub model_width: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl MultiHeadAttention {
    pub fn register(
        prefix: &str,
        heads: usize,
        query_width: usize,
        kv_width: usize,
        model_width: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !model_width.is_multiple_of(heads) {
            return Err(DginError::Config(format!(
                "{prefix}: {heads} heads do not divide width {model_width}"
            )));
        }
        Ok(Self {
            heads,
            query_width,
            kv_width,
            model_width,
            wq: params.register(format!("{prefix}.wq"), query_width, model_width, Init::Glorot, rng)?,
            wk: params.register(format!("{prefix}.wk"), kv_width, model_width, Init::Glorot, rng)?,
            wv: params.register(format!("{prefix}.wv"), kv_width, model_width, Init::Glorot, rng)?,
            wo: params.register(format!("{prefix}.wo"), model_width, model_width, Init::Glorot, rng)?,
        })
    }

    pub fn head_width(&self) -> usize {
        self.model_width / self.heads
    }

    /// `concat_i(softmax(q W^Q_i (kv W^K_i)ᵀ / sqrt(d')) kv W^V_i) W^O` per block.
    pub fn forward(&self, tape: &mut Tape<'_>, query: Var, kv: Var, blocks: Vec<AttentionBlock>) -> Result<Var> {
        let wq = tape.param(self.wq);
        let wk = tape.param(self.wk);
        let wv = tape.param(self.wv);
        let wo = tape.param(self.wo);
        let q = tape.matmul(query, wq)?;
        let k = tape.matmul(kv, wk)?;
        let v = tape.matmul(kv, wv)?;
        let heads = tape.attention(q, k, v, self.heads, blocks)?;
        tape.matmul(heads, wo)
    }

    /// Self-attention where each block attends within its own rows.
    pub fn self_attention(&self, tape: &mut Tape<'_>, x: Var, segments: &[std::ops::Range<usize>]) -> Result<Var> {
        let blocks = segments
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| AttentionBlock {
                queries: r.clone(),
                keys: r.clone(),
            })
            .collect();
        self.forward(tape, x, x, blocks)
    }
}

/// Consecutive row ranges for segments of the given lengths.
pub fn segments(lengths: impl IntoIterator<Item = usize>) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    lengths
        .into_iter()
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}
