//! Per-field embedding tables, numeric bucketing, and assembly of behavior,
//! group and candidate representations.
//!
//! Every field has its own `K×d` table with row 0 reserved for out-of-vocabulary
//! values. The item, category, price and location tables are shared between
//! behaviors, group identities and candidates.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{BehaviorEvent, BehaviorType, CandidateItem, Context, KeyField, Timestamp, UserId};
use crate::error::{DginError, Result};
use crate::numerics::{Init, ParamId, ParamSet, Tape, ValueGrid, Var};
use crate::store::{InterestGroup, MemberRecord};

/// Maps a number to a bucket index:
/// negative (the "no purchase" sentinel) → 1, zero → 2,
/// positive `v` → `3 + floor(log_base v)`, clamped to `[3, buckets − 1]`.
pub fn bucketize(value: f64, base: f64, buckets: usize) -> Result<usize> {
    if value.is_nan() {
        return Err(DginError::NaN);
    }
    if buckets < 2 || base <= 1.0 {
        return Err(DginError::Config(format!(
            "bucket rule needs base > 1 and at least 2 buckets (base {base}, {buckets} buckets)"
        )));
    }
    let top = buckets - 1;
    if value < 0.0 {
        return Ok(1.min(top));
    }
    if value == 0.0 {
        return Ok(2.min(top));
    }
    let mut exp = value.log(base).floor();
    // Correct rounding at exact powers of the base.
    if base.powf(exp + 1.0) <= value {
        exp += 1.0;
    } else if base.powf(exp) > value {
        exp -= 1.0;
    }
    let idx = 3.0 + exp;
    Ok(if idx < 3.0 { 3.min(top) } else { (idx as usize).min(top) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BucketRule {
    /// Value used directly as the row index; out of range folds to 0.
    Categorical,
    /// Ids spread over rows `1..=buckets` by `id mod buckets`.
    Hashed {
        buckets: u64,
    },
    Log {
        base: f64,
    },
    /// Log bucket of the age in seconds, doubled, plus one when the event fell on a weekend.
    AgeWeekend {
        base: f64,
    },
}

/// Every embedded field, in manifest order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    UserId,
    HourOfWeek,
    Surface,
    ItemId,
    CategoryId,
    Price,
    Timestamp,
    Location,
    BehaviorKind,
    Dwell,
    CountClick,
    CountCart,
    CountFavorite,
    CountBrowse,
    CountComments,
    CountPurchase,
    TotalBehaviors,
    DistinctTypes,
    AvgDwell,
    AvgPurchase,
    DistinctItems,
    TotalItems,
}

impl Field {
    pub const ALL: [Field; 22] = [
        Field::UserId,
        Field::HourOfWeek,
        Field::Surface,
        Field::ItemId,
        Field::CategoryId,
        Field::Price,
        Field::Timestamp,
        Field::Location,
        Field::BehaviorKind,
        Field::Dwell,
        Field::CountClick,
        Field::CountCart,
        Field::CountFavorite,
        Field::CountBrowse,
        Field::CountComments,
        Field::CountPurchase,
        Field::TotalBehaviors,
        Field::DistinctTypes,
        Field::AvgDwell,
        Field::AvgPurchase,
        Field::DistinctItems,
        Field::TotalItems,
    ];

    /// Attributes of one behavior, in concatenation order (m = 7).
    pub const BEHAVIOR: [Field; 7] = [
        Field::ItemId,
        Field::CategoryId,
        Field::Price,
        Field::Timestamp,
        Field::Location,
        Field::BehaviorKind,
        Field::Dwell,
    ];

    pub const CANDIDATE: [Field; 4] = [Field::ItemId, Field::CategoryId, Field::Price, Field::Location];

    pub const IDENTITY: [Field; 3] = [Field::ItemId, Field::CategoryId, Field::Price];

    pub const STATS: [Field; 10] = [
        Field::CountClick,
        Field::CountCart,
        Field::CountFavorite,
        Field::CountBrowse,
        Field::CountComments,
        Field::CountPurchase,
        Field::TotalBehaviors,
        Field::DistinctTypes,
        Field::AvgDwell,
        Field::AvgPurchase,
    ];

    pub const CATEGORY_STATS: [Field; 2] = [Field::DistinctItems, Field::TotalItems];

    pub fn name(self) -> &'static str {
        match self {
            Field::UserId => "user_id",
            Field::HourOfWeek => "hour_of_week",
            Field::Surface => "surface_id",
            Field::ItemId => "item_id",
            Field::CategoryId => "category_id",
            Field::Price => "price",
            Field::Timestamp => "timestamp",
            Field::Location => "location_cell",
            Field::BehaviorKind => "behavior_type",
            Field::Dwell => "dwell",
            Field::CountClick => "count_click",
            Field::CountCart => "count_add_to_cart",
            Field::CountFavorite => "count_add_to_favorite",
            Field::CountBrowse => "count_browse_dishes",
            Field::CountComments => "count_view_comments",
            Field::CountPurchase => "count_purchase",
            Field::TotalBehaviors => "total_behaviors",
            Field::DistinctTypes => "distinct_types",
            Field::AvgDwell => "avg_dwell",
            Field::AvgPurchase => "avg_purchase",
            Field::DistinctItems => "distinct_items",
            Field::TotalItems => "total_items",
        }
    }

    fn position(self) -> usize {
        Field::ALL.iter().position(|&f| f == self).expect("listed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSchema {
    pub field: Field,
    /// Table rows K, including the reserved row 0.
    pub cardinality: usize,
    pub rule: BucketRule,
}

/// Vocabulary sizes of the categorical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: u64,
    pub items: u64,
    pub categories: u64,
    pub location_cells: u64,
    pub surfaces: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub dim: usize,
    pub key_field: KeyField,
    pub fields: Vec<FieldSchema>,
}

const AGE_BUCKETS: usize = 32;

impl Schema {
    /// Builds the fixed field layout. Ids are used directly as rows, so a
    /// vocabulary of `n` ids occupies rows `1..=n`.
    pub fn new(dim: usize, key_field: KeyField, vocab: Vocab) -> Result<Self> {
        if dim == 0 {
            return Err(DginError::Config("embedding dimension must be positive".into()));
        }
        let cat = |n: u64| (n as usize + 1).max(2);
        let fields = Field::ALL
            .iter()
            .map(|&field| {
                let (cardinality, rule) = match field {
                    Field::UserId => (cat(vocab.users), BucketRule::Categorical),
                    Field::HourOfWeek => (169, BucketRule::Categorical),
                    Field::Surface => (cat(vocab.surfaces), BucketRule::Categorical),
                    Field::ItemId => (cat(vocab.items), BucketRule::Categorical),
                    Field::CategoryId => (cat(vocab.categories), BucketRule::Categorical),
                    Field::Location => (cat(vocab.location_cells), BucketRule::Categorical),
                    Field::BehaviorKind => (BehaviorType::COUNT + 1, BucketRule::Categorical),
                    Field::Price | Field::AvgPurchase => (24, BucketRule::Log { base: 2.0 }),
                    Field::Dwell | Field::AvgDwell => (16, BucketRule::Log { base: 2.0 }),
                    Field::Timestamp => (2 * AGE_BUCKETS, BucketRule::AgeWeekend { base: 2.0 }),
                    Field::DistinctTypes => (16, BucketRule::Log { base: 1.2 }),
                    _ => (32, BucketRule::Log { base: 1.5 }),
                };
                FieldSchema {
                    field,
                    cardinality,
                    rule,
                }
            })
            .collect();
        Ok(Self { dim, key_field, fields })
    }

    /// Hashes user ids into `buckets` rows instead of one row per user.
    pub fn with_user_buckets(mut self, buckets: u64) -> Result<Self> {
        if buckets == 0 {
            return Err(DginError::Config("user bucket count must be positive".into()));
        }
        let f = &mut self.fields[Field::UserId.position()];
        f.cardinality = buckets as usize + 1;
        f.rule = BucketRule::Hashed { buckets };
        Ok(self)
    }

    pub fn field(&self, f: Field) -> &FieldSchema {
        &self.fields[f.position()]
    }

    pub fn category_mode(&self) -> bool {
        self.key_field == KeyField::CategoryId
    }

    /// Fields embedded per group member (3 attributes, plus item_id in category mode).
    pub fn member_fields(&self) -> Vec<Field> {
        let mut f = vec![Field::Timestamp, Field::Location, Field::BehaviorKind];
        if self.category_mode() {
            f.push(Field::ItemId);
        }
        f
    }

    pub fn stat_fields(&self) -> Vec<Field> {
        let mut f = Field::STATS.to_vec();
        if self.category_mode() {
            f.extend(Field::CATEGORY_STATS);
        }
        f
    }

    /// Text manifest: field order, cardinalities and bucket rules.
    pub fn manifest(&self) -> String {
        let mut s = String::from("dgin-schema 1\n");
        let _ = writeln!(s, "dim {}", self.dim);
        let _ = writeln!(s, "key_field {}", self.key_field.name());
        for f in &self.fields {
            let rule = match f.rule {
                BucketRule::Categorical => "categorical".to_string(),
                BucketRule::Hashed { buckets } => format!("hashed buckets={buckets}"),
                BucketRule::Log { base } => format!("log base={base}"),
                BucketRule::AgeWeekend { base } => format!("age_weekend base={base}"),
            };
            let _ = writeln!(s, "field {} {} {}", f.field.name(), f.cardinality, rule);
        }
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.manifest().as_bytes()))
    }
}

/// Monday-based weekend test for a unix timestamp (1970-01-01 was a Thursday).
pub fn is_weekend(ts: Timestamp) -> bool {
    let day = ts.div_euclid(86_400);
    (day + 3).rem_euclid(7) >= 5
}

/// Embedding tables bound to a parameter set.
#[derive(Debug)]
pub struct Embedder {
    schema: Schema,
    tables: Vec<ParamId>,
    oov: AtomicU64,
}

impl Clone for Embedder {
    fn clone(&self) -> Self {
        Self {
            schema: self.schema.clone(),
            tables: self.tables.clone(),
            oov: AtomicU64::new(self.oov.load(Ordering::Relaxed)),
        }
    }
}

pub fn table_name(f: Field) -> String {
    format!("emb.{}", f.name())
}

impl Embedder {
    /// Registers one `K×d` table per field. Rows start uniform in
    /// `±sqrt(3/d)`, so each row has unit expected squared norm whatever the
    /// vocabulary size.
    pub fn register(schema: Schema, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        let mut tables = Vec::with_capacity(schema.fields.len());
        let init = Init::Uniform((3.0 / schema.dim as f64).sqrt());
        for f in &schema.fields {
            tables.push(params.register(table_name(f.field), f.cardinality, schema.dim, init, rng)?);
        }
        Ok(Self {
            schema,
            tables,
            oov: AtomicU64::new(0),
        })
    }

    /// Binds to tables already present in `params`.
    pub fn bind(schema: Schema, params: &ParamSet) -> Result<Self> {
        let mut tables = Vec::with_capacity(schema.fields.len());
        for f in &schema.fields {
            let name = table_name(f.field);
            let id = params
                .id(&name)
                .ok_or_else(|| DginError::Config(format!("missing embedding table `{name}`")))?;
            if params.get(id).shape() != (f.cardinality, schema.dim) {
                return Err(DginError::Config(format!(
                    "table `{name}` has shape {:?}, schema wants {:?}",
                    params.get(id).shape(),
                    (f.cardinality, schema.dim)
                )));
            }
            tables.push(id);
        }
        Ok(Self {
            schema,
            tables,
            oov: AtomicU64::new(0),
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn dim(&self) -> usize {
        self.schema.dim
    }

    pub fn table(&self, f: Field) -> ParamId {
        self.tables[f.position()]
    }

    /// Number of categorical lookups folded to row 0 so far.
    pub fn oov_count(&self) -> u64 {
        self.oov.load(Ordering::Relaxed)
    }

    /// Row index for a categorical id.
    pub fn categorical(&self, f: Field, id: u64) -> usize {
        let s = self.schema.field(f);
        if let BucketRule::Hashed { buckets } = s.rule {
            return 1 + (id % buckets) as usize;
        }
        let k = s.cardinality as u64;
        if id < k {
            id as usize
        } else {
            self.oov.fetch_add(1, Ordering::Relaxed);
            0
        }
    }

    fn numeric(&self, f: Field, v: f64) -> usize {
        let s = self.schema.field(f);
        match s.rule {
            BucketRule::Log { base } => bucketize(v, base, s.cardinality).unwrap_or(0),
            _ => unreachable!("{} is not a log field", f.name()),
        }
    }

    fn timestamp(&self, ts: Timestamp, as_of: Timestamp) -> usize {
        let age = (as_of - ts).max(0) as f64;
        let BucketRule::AgeWeekend { base } = self.schema.field(Field::Timestamp).rule else {
            unreachable!()
        };
        let b = bucketize(age, base, AGE_BUCKETS).unwrap_or(0);
        2 * b + is_weekend(ts) as usize
    }

    fn behavior_kind(t: BehaviorType) -> usize {
        t.ordinal() + 1
    }

    /// Row indices of the m behavior attributes, in [`Field::BEHAVIOR`] order.
    pub fn behavior_rows(&self, e: &BehaviorEvent, as_of: Timestamp) -> [usize; 7] {
        [
            self.categorical(Field::ItemId, e.item_id),
            self.categorical(Field::CategoryId, e.category_id),
            self.numeric(Field::Price, e.price_cents as f64),
            self.timestamp(e.timestamp, as_of),
            self.categorical(Field::Location, e.location_cell),
            Self::behavior_kind(e.behavior_type),
            self.numeric(Field::Dwell, e.dwell_seconds as f64),
        ]
    }

    pub fn member_rows(&self, m: &MemberRecord, as_of: Timestamp) -> Vec<usize> {
        let mut rows = vec![
            self.timestamp(m.timestamp, as_of),
            self.categorical(Field::Location, m.location_cell),
            Self::behavior_kind(m.behavior_type),
        ];
        if self.schema.category_mode() {
            rows.push(self.categorical(Field::ItemId, m.item_id));
        }
        rows
    }

    pub fn identity_rows(&self, g: &InterestGroup) -> [usize; 3] {
        [
            g.identity.item_id.map_or(0, |i| self.categorical(Field::ItemId, i)),
            self.categorical(Field::CategoryId, g.identity.category_id),
            self.numeric(Field::Price, g.identity.price_cents as f64),
        ]
    }

    pub fn stat_rows(&self, g: &InterestGroup) -> Vec<usize> {
        let s = &g.stats;
        let mut rows: Vec<usize> = s
            .per_type_counts
            .iter()
            .zip(&Field::STATS[..6])
            .map(|(&c, &f)| self.numeric(f, c as f64))
            .collect();
        rows.push(self.numeric(Field::TotalBehaviors, s.total_behaviors as f64));
        rows.push(self.numeric(Field::DistinctTypes, s.distinct_types as f64));
        rows.push(self.numeric(Field::AvgDwell, s.avg_dwell_seconds));
        rows.push(self.numeric(Field::AvgPurchase, s.avg_purchase_cents));
        if self.schema.category_mode() {
            rows.push(self.numeric(Field::DistinctItems, s.distinct_item_count.unwrap_or(0) as f64));
            rows.push(self.numeric(Field::TotalItems, s.total_item_count.unwrap_or(0) as f64));
        }
        rows
    }

    pub fn candidate_rows(&self, c: &CandidateItem) -> [usize; 4] {
        [
            self.categorical(Field::ItemId, c.item_id),
            self.categorical(Field::CategoryId, c.category_id),
            self.numeric(Field::Price, c.price_cents as f64),
            self.categorical(Field::Location, c.location_cell),
        ]
    }

    /// Gathers `rows[i][j]` from table `fields[j]` and concatenates per row.
    pub fn lookup<R: AsRef<[usize]>>(&self, tape: &mut Tape<'_>, fields: &[Field], rows: &[R]) -> Result<Var> {
        let parts: Vec<Var> = fields
            .iter()
            .enumerate()
            .map(|(j, &f)| tape.gather(self.table(f), rows.iter().map(|r| r.as_ref()[j]).collect()))
            .collect();
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        tape.concat_cols(&parts)
    }

    /// `n × 7d` behavior representations.
    pub fn embed_behaviors(&self, tape: &mut Tape<'_>, events: &[BehaviorEvent], as_of: Timestamp) -> Result<Var> {
        let rows: Vec<[usize; 7]> = events.iter().map(|e| self.behavior_rows(e, as_of)).collect();
        self.lookup(tape, &Field::BEHAVIOR, &rows)
    }

    pub fn embed_members(&self, tape: &mut Tape<'_>, members: &[MemberRecord], as_of: Timestamp) -> Result<Var> {
        let rows: Vec<Vec<usize>> = members.iter().map(|m| self.member_rows(m, as_of)).collect();
        self.lookup(tape, &self.schema.member_fields(), &rows)
    }

    pub fn embed_identity(&self, tape: &mut Tape<'_>, groups: &[&InterestGroup]) -> Result<Var> {
        let rows: Vec<[usize; 3]> = groups.iter().map(|g| self.identity_rows(g)).collect();
        self.lookup(tape, &Field::IDENTITY, &rows)
    }

    pub fn embed_stats(&self, tape: &mut Tape<'_>, groups: &[&InterestGroup]) -> Result<Var> {
        let rows: Vec<Vec<usize>> = groups.iter().map(|g| self.stat_rows(g)).collect();
        self.lookup(tape, &self.schema.stat_fields(), &rows)
    }

    pub fn embed_candidates(&self, tape: &mut Tape<'_>, cands: &[CandidateItem]) -> Result<Var> {
        let rows: Vec<[usize; 4]> = cands.iter().map(|c| self.candidate_rows(c)).collect();
        self.lookup(tape, &Field::CANDIDATE, &rows)
    }

    /// `n × 3d`: user id, hour of week, surface.
    pub fn embed_user_context(&self, tape: &mut Tape<'_>, rows: &[(UserId, Context)]) -> Result<Var> {
        let idx: Vec<[usize; 3]> = rows
            .iter()
            .map(|(u, c)| {
                [
                    self.categorical(Field::UserId, *u),
                    self.categorical(Field::HourOfWeek, c.hour_of_week as u64),
                    self.categorical(Field::Surface, c.surface_id as u64),
                ]
            })
            .collect();
        self.lookup(tape, &[Field::UserId, Field::HourOfWeek, Field::Surface], &idx)
    }

    /// Row `index` of the field's table; out-of-range folds to row 0.
    pub fn embed_field(&self, params: &ParamSet, f: Field, index: u64) -> ValueGrid {
        let row = self.categorical(f, index);
        ValueGrid::row_vector(params.get(self.table(f)).grid.row(row).to_vec())
    }

    /// `1 × 7d` representation of one event.
    pub fn embed_behavior(&self, params: &ParamSet, e: &BehaviorEvent, as_of: Timestamp) -> Result<ValueGrid> {
        let mut tape = Tape::new(params);
        let v = self.embed_behaviors(&mut tape, std::slice::from_ref(e), as_of)?;
        Ok(tape.value(v).clone())
    }

    /// `(1 × 3d, 1 × k_s·d)` identity and statistics embeddings of one group.
    pub fn embed_group_identity_and_stats(
        &self,
        params: &ParamSet,
        g: &InterestGroup,
    ) -> Result<(ValueGrid, ValueGrid)> {
        let mut tape = Tape::new(params);
        let ident = self.embed_identity(&mut tape, &[g])?;
        let stats = self.embed_stats(&mut tape, &[g])?;
        Ok((tape.value(ident).clone(), tape.value(stats).clone()))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::store::compute_stats;

    fn vocab() -> Vocab {
        Vocab {
            users: 10,
            items: 20,
            categories: 5,
            location_cells: 6,
            surfaces: 3,
        }
    }

    fn embedder(d: usize, key: KeyField) -> (Embedder, ParamSet) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = Embedder::register(Schema::new(d, key, vocab()).unwrap(), &mut ps, &mut rng).unwrap();
        (e, ps)
    }

    fn event(t: BehaviorType) -> BehaviorEvent {
        BehaviorEvent {
            item_id: 3,
            category_id: 2,
            price_cents: 0,
            timestamp: 1_700_000_000,
            location_cell: 4,
            behavior_type: t,
            dwell_seconds: 12,
        }
    }

    #[test]
    fn bucket_rule_cases() {
        assert_eq!(bucketize(-1.0, 2.0, 16).unwrap(), 1);
        assert_eq!(bucketize(0.0, 2.0, 16).unwrap(), 2);
        assert_eq!(bucketize(9.0, 2.0, 16).unwrap(), 6);
        assert_eq!(bucketize(8.0, 2.0, 16).unwrap(), 6);
        assert_eq!(bucketize(7.999, 2.0, 16).unwrap(), 5);
        assert_eq!(bucketize(1000.0, 10.0, 16).unwrap(), 6);
        assert_eq!(bucketize(1e30, 2.0, 16).unwrap(), 15);
        assert_eq!(bucketize(0.25, 2.0, 16).unwrap(), 3);
        assert!(matches!(bucketize(f64::NAN, 2.0, 16), Err(DginError::NaN)));
        assert!(bucketize(1.0, 2.0, 1).is_err());
    }

    #[test]
    fn weekend_detection() {
        // 2023-11-18 was a Saturday, 2023-11-20 a Monday.
        assert!(is_weekend(1_700_265_600));
        assert!(!is_weekend(1_700_438_400));
    }

    #[test]
    fn out_of_vocab_folds_to_row_zero() {
        let (e, ps) = embedder(4, KeyField::ItemId);
        assert_eq!(
            e.embed_field(&ps, Field::ItemId, 0),
            e.embed_field(&ps, Field::ItemId, 999)
        );
        assert_eq!(e.oov_count(), 1);
        assert_ne!(
            e.embed_field(&ps, Field::ItemId, 1),
            e.embed_field(&ps, Field::ItemId, 0)
        );
    }

    #[test]
    fn behavior_width_and_locality() {
        let (e, ps) = embedder(4, KeyField::ItemId);
        let a = e
            .embed_behavior(&ps, &event(BehaviorType::Click), 1_700_100_000)
            .unwrap();
        let b = e
            .embed_behavior(&ps, &event(BehaviorType::ViewComments), 1_700_100_000)
            .unwrap();
        assert_eq!(a.shape(), (1, 28));
        let differing: Vec<usize> = (0..7)
            .filter(|s| a.values()[s * 4..s * 4 + 4] != b.values()[s * 4..s * 4 + 4])
            .collect();
        assert_eq!(differing, vec![5]);
    }

    #[test]
    fn bind_reports_missing_table() {
        let schema = Schema::new(4, KeyField::ItemId, vocab()).unwrap();
        assert!(matches!(
            Embedder::bind(schema, &ParamSet::new()),
            Err(DginError::Config(_))
        ));
    }

    #[test]
    fn group_widths_and_count_boundary() {
        let (e, ps) = embedder(4, KeyField::ItemId);
        let evs = vec![event(BehaviorType::Click), event(BehaviorType::Click)];
        let mut g = crate::store::group_sequence(
            &crate::datamodel::BehaviorSequence::new(1, evs.clone(), 10).unwrap(),
            KeyField::ItemId,
            8,
            8,
        )
        .groups
        .remove(0);
        let (ident, stats) = e.embed_group_identity_and_stats(&ps, &g).unwrap();
        assert_eq!((ident.cols(), stats.cols()), (12, 40));

        // A click count of 2 -> 3 crosses a base-1.5 bucket boundary
        // (log1.5 2 = 1.71, log1.5 3 = 2.71); only the click slice may move.
        let before = stats.clone();
        g.stats.per_type_counts[0] = 3;
        let (_, after) = e.embed_group_identity_and_stats(&ps, &g).unwrap();
        let changed: Vec<usize> = (0..10)
            .filter(|s| before.values()[s * 4..s * 4 + 4] != after.values()[s * 4..s * 4 + 4])
            .collect();
        assert_eq!(changed, vec![0]);

        let again = compute_stats(&evs, false).unwrap();
        let mut g2 = g.clone();
        g2.stats = again;
        let mut g3 = g2.clone();
        g3.interest_key = 77;
        assert_eq!(
            e.embed_group_identity_and_stats(&ps, &g2).unwrap().1,
            e.embed_group_identity_and_stats(&ps, &g3).unwrap().1
        );
    }

    #[test]
    fn category_mode_widens_stats() {
        let (e, _) = embedder(4, KeyField::CategoryId);
        assert_eq!(e.schema().stat_fields().len(), 12);
        assert_eq!(e.schema().member_fields().len(), 4);
    }

    #[test]
    fn schema_hash_tracks_layout() {
        let a = Schema::new(4, KeyField::ItemId, vocab()).unwrap();
        let b = Schema::new(8, KeyField::ItemId, vocab()).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Schema::new(4, KeyField::ItemId, vocab()).unwrap().hash());
        let manifest = a.manifest();
        let order: Vec<&str> = manifest
            .lines()
            .filter_map(|l| l.strip_prefix("field "))
            .map(|l| l.split(' ').next().unwrap())
            .collect();
        let expected: Vec<&str> = Field::ALL.iter().map(|f| f.name()).collect();
        assert_eq!(order, expected);
    }
}
