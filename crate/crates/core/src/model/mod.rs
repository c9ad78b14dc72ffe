//! The full CTR model: embeddings, Group Module, Target Module and the MLP head.

pub mod ablate;
pub mod metrics;
pub mod train;

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::MultiHeadAttention;
use crate::datamodel::{BehaviorEvent, BehaviorType, Instance, KeyField, UserId};
use crate::embedding::{Embedder, Field, Schema, Vocab};
use crate::error::{DginError, Result};
use crate::group_module::{fill_with_null, GroupModule};
use crate::numerics::{AttentionBlock, Gradients, Init, ParamId, ParamSet, Tape, ValueGrid, Var};
use crate::serving::GroupCache;
use crate::store::{InterestGroup, StoreConfig, TwoLevelIndex};
use crate::target_module::TargetModule;

pub use metrics::{batch_loss, compute_auc, evaluate, MetricReport};

/// Model variants of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "simple+stats")]
    SimpleStats,
    #[serde(rename = "simple+stats+agg")]
    SimpleStatsAgg,
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "click_only")]
    ClickOnly,
    #[serde(rename = "truncated_baseline")]
    TruncatedBaseline,
}

impl Variant {
    /// Fixed reporting order.
    pub const LADDER: [Variant; 6] = [
        Variant::Simple,
        Variant::SimpleStats,
        Variant::SimpleStatsAgg,
        Variant::Full,
        Variant::ClickOnly,
        Variant::TruncatedBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Simple => "simple",
            Variant::SimpleStats => "simple+stats",
            Variant::SimpleStatsAgg => "simple+stats+agg",
            Variant::Full => "full",
            Variant::ClickOnly => "click_only",
            Variant::TruncatedBaseline => "truncated_baseline",
        }
    }

    pub fn uses_group_module(self) -> bool {
        self != Variant::TruncatedBaseline
    }

    pub fn uses_stats(self) -> bool {
        !matches!(self, Variant::Simple | Variant::TruncatedBaseline)
    }

    pub fn uses_aggregated(self) -> bool {
        matches!(self, Variant::SimpleStatsAgg | Variant::Full | Variant::ClickOnly)
    }

    pub fn uses_target_module(self) -> bool {
        matches!(self, Variant::Full | Variant::ClickOnly)
    }

    /// Whether the variant only ever sees click events.
    pub fn clicks_only(self) -> bool {
        self == Variant::ClickOnly
    }

    /// Whether `e` belongs in this variant's behavior store.
    pub fn keeps(self, e: &BehaviorEvent) -> bool {
        !self.clicks_only() || e.behavior_type == BehaviorType::Click
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = DginError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::LADDER
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| DginError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub max_members: usize,
    pub max_groups: usize,
    pub subsequence_len: usize,
    /// Raw events seen by the truncated baseline.
    pub baseline_len: usize,
    /// When set, user ids share this many hashed embedding rows.
    #[serde(default)]
    pub user_buckets: Option<u64>,
    pub key_field: KeyField,
    pub variant: Variant,
    /// Hidden widths followed by the output width 1.
    pub mlp_widths: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            heads: 2,
            max_members: 16,
            max_groups: 256,
            subsequence_len: 50,
            baseline_len: 50,
            user_buckets: None,
            key_field: KeyField::ItemId,
            variant: Variant::Full,
            mlp_widths: vec![256, 128, 64, 1],
            lr: 1e-3,
            batch_size: 256,
            epochs: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 {
            return Err(DginError::Config("dim and heads must be positive".into()));
        }
        if self.mlp_widths.last() != Some(&1) {
            return Err(DginError::Config("the last MLP width must be 1".into()));
        }
        if self.mlp_widths.contains(&0) {
            return Err(DginError::Config("MLP widths must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(DginError::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(DginError::Config(format!("invalid learning rate {}", self.lr)));
        }
        if self.max_members == 0 || self.max_groups == 0 || self.subsequence_len == 0 || self.baseline_len == 0 {
            return Err(DginError::Config("B, G, T and baseline length must be positive".into()));
        }
        if self.user_buckets == Some(0) {
            return Err(DginError::Config("user_buckets must be positive".into()));
        }
        Ok(())
    }

    /// Store layout matching this model.
    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            key_field: self.key_field,
            max_members: self.max_members,
            max_groups: self.max_groups,
            subsequence_len: self.subsequence_len,
            raw_window: self.baseline_len,
        }
    }
}

/// Output of the forward pass for one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p: f64,
    pub logit: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Baseline {
    pub attention: MultiHeadAttention,
    pub null: ParamId,
}

/// Handles into the tape for one batch.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub logits: Var,
    /// The MLP input.
    pub features: Var,
    pub interest_gm: Option<Var>,
    pub interest_tm: Option<Var>,
}

/// Column ranges of each slice in the MLP input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub user_context: Range<usize>,
    pub candidate: Range<usize>,
    pub interest_gm: Option<Range<usize>>,
    pub interest_tm: Option<Range<usize>>,
    pub baseline: Option<Range<usize>>,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        [
            Some(&self.candidate),
            self.interest_gm.as_ref(),
            self.interest_tm.as_ref(),
            self.baseline.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(|r| r.end)
        .max()
        .unwrap_or(self.user_context.end)
    }
}

#[derive(Debug, Clone)]
pub struct Dgin {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamSet,
    pub embedder: Embedder,
    pub group_module: Option<GroupModule>,
    pub target_module: Option<TargetModule>,
    pub baseline: Option<Baseline>,
    pub mlp: Vec<Dense>,
    pub layout: FeatureLayout,
}

impl Dgin {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut schema = Schema::new(config.dim, config.key_field, vocab)?;
        if let Some(b) = config.user_buckets {
            schema = schema.with_user_buckets(b)?;
        }
        let embedder = Embedder::register(schema, &mut params, &mut rng)?;
        let d = config.dim;
        let v = config.variant;
        let group_module = if v.uses_group_module() {
            Some(GroupModule::register(
                &embedder,
                config.heads,
                v.uses_stats(),
                v.uses_aggregated(),
                &mut params,
                &mut rng,
            )?)
        } else {
            None
        };
        let target_module = if v.uses_target_module() {
            Some(TargetModule::register(&embedder, config.heads, &mut params, &mut rng)?)
        } else {
            None
        };
        let behavior_width = Field::BEHAVIOR.len() * d;
        let candidate_width = Field::CANDIDATE.len() * d;
        let baseline = if v == Variant::TruncatedBaseline {
            Some(Baseline {
                attention: MultiHeadAttention::register(
                    "baseline.mhta",
                    config.heads,
                    candidate_width,
                    behavior_width,
                    behavior_width,
                    &mut params,
                    &mut rng,
                )?,
                null: params.register("baseline.null", 1, behavior_width, Init::Glorot, &mut rng)?,
            })
        } else {
            None
        };

        let mut at = 3 * d;
        let mut take = |w: usize| {
            let r = at..at + w;
            at += w;
            r
        };
        let candidate = take(candidate_width);
        let interest_gm = group_module.as_ref().map(|g| take(g.layout.width()));
        let interest_tm = target_module.as_ref().map(|t| take(t.width));
        let baseline_range = baseline.as_ref().map(|_| take(behavior_width));
        let layout = FeatureLayout {
            user_context: 0..3 * d,
            candidate,
            interest_gm,
            interest_tm,
            baseline: baseline_range,
        };

        let mut mlp = Vec::with_capacity(config.mlp_widths.len());
        let mut fan_in = layout.width();
        for (i, &w) in config.mlp_widths.iter().enumerate() {
            mlp.push(Dense {
                w: params.register(format!("mlp.{i}.w"), fan_in, w, Init::Glorot, &mut rng)?,
                b: params.register(format!("mlp.{i}.b"), 1, w, Init::Zeros, &mut rng)?,
            });
            fan_in = w;
        }
        Ok(Self {
            config,
            vocab,
            params,
            embedder,
            group_module,
            target_module,
            baseline,
            mlp,
            layout,
        })
    }

    /// Identifies the parameter layout; checkpoints refuse to load across layouts.
    pub fn schema_hash(&self) -> String {
        let c = &self.config;
        let arch = serde_json::json!({
            "embedding": self.embedder.schema().manifest(),
            "dim": c.dim,
            "heads": c.heads,
            "B": c.max_members,
            "G": c.max_groups,
            "T": c.subsequence_len,
            "baseline_len": c.baseline_len,
            "key_field": c.key_field,
            "variant": c.variant,
            "mlp_widths": c.mlp_widths,
        });
        hex::encode(Sha256::digest(arch.to_string().as_bytes()))
    }

    fn check_store(&self, store: &TwoLevelIndex) -> Result<()> {
        let sc = store.config();
        let mc = &self.config;
        if sc.key_field != mc.key_field
            || sc.max_groups < mc.max_groups
            || sc.max_members != mc.max_members
            || sc.subsequence_len < mc.subsequence_len
            || sc.raw_window < mc.baseline_len
        {
            return Err(DginError::Config(format!(
                "store layout {sc:?} does not serve model key={} B={} G={} T={} window={}",
                mc.key_field.name(),
                mc.max_members,
                mc.max_groups,
                mc.subsequence_len,
                mc.baseline_len
            )));
        }
        Ok(())
    }

    /// Top groups per distinct user, in first-appearance order, and each
    /// instance's row range into the stacked group rows.
    fn collect_groups<'s>(
        &self,
        store: &'s TwoLevelIndex,
        instances: &[Instance],
    ) -> (Vec<UserId>, Vec<Vec<&'s InterestGroup>>, Vec<Range<usize>>) {
        let mut slot: HashMap<UserId, Range<usize>> = HashMap::new();
        let mut users = Vec::new();
        let mut groups = Vec::new();
        let mut next = 0;
        let ranges = instances
            .iter()
            .map(|inst| {
                slot.entry(inst.user_id)
                    .or_insert_with(|| {
                        let mut gs = store.top_groups(inst.user_id);
                        gs.truncate(self.config.max_groups);
                        let r = next..next + gs.len();
                        next += gs.len();
                        users.push(inst.user_id);
                        groups.push(gs);
                        r
                    })
                    .clone()
            })
            .collect();
        (users, groups, ranges)
    }

    fn group_interest(
        &self,
        gm: &GroupModule,
        tape: &mut Tape<'_>,
        store: &TwoLevelIndex,
        instances: &[Instance],
        candidates: Var,
        cache: Option<&GroupCache>,
    ) -> Result<Var> {
        let (users, groups, ranges) = self.collect_groups(store, instances);
        let total: usize = groups.iter().map(Vec::len).sum();
        let rows = if total == 0 {
            None
        } else if let Some(cache) = cache {
            let mut stacked = Vec::with_capacity(total * gm.layout.width());
            for (u, gs) in users.iter().zip(&groups) {
                let cached = cache.rows(*u).unwrap_or(&[]);
                if cached.len() != gs.len() * gm.layout.width() {
                    return Err(DginError::Precondition(format!(
                        "cache holds {} values for user {u}, store view needs {} groups",
                        cached.len(),
                        gs.len()
                    )));
                }
                stacked.extend_from_slice(cached);
            }
            Some(tape.constant(ValueGrid::from_vec(total, gm.layout.width(), stacked)?))
        } else {
            let flat: Vec<&InterestGroup> = groups.into_iter().flatten().collect();
            Some(gm.group_rows(tape, &self.embedder, &flat, store.as_of())?)
        };
        gm.interest(tape, candidates, rows, &ranges)
    }

    fn decision_interest(
        &self,
        tm: &TargetModule,
        tape: &mut Tape<'_>,
        store: &TwoLevelIndex,
        instances: &[Instance],
        candidates: Var,
    ) -> Result<Var> {
        let key_field = self.config.key_field;
        let t = self.config.subsequence_len;
        let mut slot: HashMap<(UserId, u64), Range<usize>> = HashMap::new();
        let mut events: Vec<BehaviorEvent> = Vec::new();
        let mut segments = Vec::new();
        let ranges: Vec<Range<usize>> = instances
            .iter()
            .map(|inst| {
                let key = inst.candidate.key(key_field);
                slot.entry((inst.user_id, key))
                    .or_insert_with(|| {
                        let seq = store
                            .lookup(inst.user_id, key)
                            .map(|g| &g.recent_events[g.recent_events.len().saturating_sub(t)..])
                            .unwrap_or(&[]);
                        let r = events.len()..events.len() + seq.len();
                        events.extend_from_slice(seq);
                        if !r.is_empty() {
                            segments.push(r.clone());
                        }
                        r
                    })
                    .clone()
            })
            .collect();
        let out_enc = if events.is_empty() {
            None
        } else {
            let e_t = self.embedder.embed_behaviors(tape, &events, store.as_of())?;
            Some(tm.encode(tape, e_t, &segments)?.1)
        };
        tm.decode(tape, out_enc, candidates, &ranges)
    }

    fn baseline_interest(
        &self,
        base: &Baseline,
        tape: &mut Tape<'_>,
        store: &TwoLevelIndex,
        instances: &[Instance],
        candidates: Var,
    ) -> Result<Var> {
        let mut slot: HashMap<UserId, Range<usize>> = HashMap::new();
        let mut events: Vec<BehaviorEvent> = Vec::new();
        let ranges: Vec<Range<usize>> = instances
            .iter()
            .map(|inst| {
                slot.entry(inst.user_id)
                    .or_insert_with(|| {
                        let seq = store.recent_behaviors(inst.user_id, self.config.baseline_len);
                        let r = events.len()..events.len() + seq.len();
                        events.extend_from_slice(seq);
                        r
                    })
                    .clone()
            })
            .collect();
        let present: Vec<usize> = (0..ranges.len()).filter(|&i| !ranges[i].is_empty()).collect();
        let null = tape.param(base.null);
        let attended = if present.is_empty() {
            None
        } else {
            let kv = self.embedder.embed_behaviors(tape, &events, store.as_of())?;
            let q = tape.select_rows(candidates, present.clone());
            let blocks = present
                .iter()
                .enumerate()
                .map(|(qi, &i)| AttentionBlock {
                    queries: qi..qi + 1,
                    keys: ranges[i].clone(),
                })
                .collect();
            Some(base.attention.forward(tape, q, kv, blocks)?)
        };
        Ok(fill_with_null(tape, attended, null, ranges.len(), &present))
    }

    /// Records the forward pass of a batch on `tape`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<'_>,
        store: &TwoLevelIndex,
        instances: &[Instance],
        cache: Option<&GroupCache>,
    ) -> Result<ForwardVars> {
        if instances.is_empty() {
            return Err(DginError::Precondition("empty batch".into()));
        }
        self.check_store(store)?;
        let uc: Vec<_> = instances.iter().map(|i| (i.user_id, i.context)).collect();
        let user_context = self.embedder.embed_user_context(tape, &uc)?;
        let cands: Vec<_> = instances.iter().map(|i| i.candidate).collect();
        let candidates = self.embedder.embed_candidates(tape, &cands)?;
        let mut parts = vec![user_context, candidates];
        let interest_gm = match &self.group_module {
            Some(gm) => Some(self.group_interest(gm, tape, store, instances, candidates, cache)?),
            None => None,
        };
        let interest_tm = match &self.target_module {
            Some(tm) => Some(self.decision_interest(tm, tape, store, instances, candidates)?),
            None => None,
        };
        let baseline = match &self.baseline {
            Some(b) => Some(self.baseline_interest(b, tape, store, instances, candidates)?),
            None => None,
        };
        parts.extend(interest_gm);
        parts.extend(interest_tm);
        parts.extend(baseline);
        let features = tape.concat_cols(&parts)?;
        let mut h = features;
        for (i, layer) in self.mlp.iter().enumerate() {
            let w = tape.param(layer.w);
            let b = tape.param(layer.b);
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if i + 1 < self.mlp.len() {
                h = tape.relu(h);
            }
        }
        Ok(ForwardVars {
            logits: h,
            features,
            interest_gm,
            interest_tm,
        })
    }

    /// Predictions for a batch, evaluated together.
    pub fn predict_batch(
        &self,
        store: &TwoLevelIndex,
        instances: &[Instance],
        cache: Option<&GroupCache>,
    ) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_tape(&mut tape, store, instances, cache)?;
        Ok(tape
            .value(out.logits)
            .values()
            .iter()
            .map(|&z| Prediction {
                p: crate::numerics::sigmoid(z),
                logit: z,
            })
            .collect())
    }

    pub fn forward(&self, instance: &Instance, store: &TwoLevelIndex) -> Result<Prediction> {
        Ok(self.predict_batch(store, std::slice::from_ref(instance), None)?[0])
    }

    /// Probabilities for all instances in `batch_size` chunks.
    pub fn predict(&self, store: &TwoLevelIndex, instances: &[Instance]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(instances.len());
        for chunk in instances.chunks(self.config.batch_size) {
            out.extend(self.predict_batch(store, chunk, None)?.into_iter().map(|p| p.p));
        }
        Ok(out)
    }

    /// Loss and parameter gradients for one batch.
    pub fn loss_and_gradients(&self, store: &TwoLevelIndex, batch: &[Instance]) -> Result<(f64, Gradients)> {
        let labels: Vec<f64> = batch.iter().map(Instance::label_f64).collect();
        let mut tape = Tape::new(&self.params);
        let out = self.forward_tape(&mut tape, store, batch, None)?;
        let loss = tape.bce_with_logits(out.logits, &labels)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, grads))
    }

    /// The `e_g` rows of one user, computed fresh.
    pub fn user_group_rows(&self, store: &TwoLevelIndex, user: UserId) -> Result<ValueGrid> {
        let Some(gm) = &self.group_module else {
            return Err(DginError::Config(format!(
                "variant {} has no group module",
                self.config.variant
            )));
        };
        let mut groups = store.top_groups(user);
        groups.truncate(self.config.max_groups);
        if groups.is_empty() {
            return Ok(ValueGrid::zeros(0, gm.layout.width()));
        }
        let mut tape = Tape::new(&self.params);
        let rows = gm.group_rows(&mut tape, &self.embedder, &groups, store.as_of())?;
        Ok(tape.value(rows).clone())
    }
}

/// Vocabulary sizes covering every id in `events` and `instances`.
pub fn vocab_from_data<'a>(
    events: impl IntoIterator<Item = (UserId, &'a BehaviorEvent)>,
    instances: &[Instance],
) -> Vocab {
    let mut v = Vocab {
        users: 0,
        items: 0,
        categories: 0,
        location_cells: 0,
        surfaces: 0,
    };
    for (u, e) in events {
        v.users = v.users.max(u);
        v.items = v.items.max(e.item_id);
        v.categories = v.categories.max(e.category_id);
        v.location_cells = v.location_cells.max(e.location_cell);
    }
    for i in instances {
        v.users = v.users.max(i.user_id);
        v.items = v.items.max(i.candidate.item_id);
        v.categories = v.categories.max(i.candidate.category_id);
        v.location_cells = v.location_cells.max(i.candidate.location_cell);
        v.surfaces = v.surfaces.max(i.context.surface_id as u64);
    }
    v
}
