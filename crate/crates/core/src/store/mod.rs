//! Grouped lifelong behavior store.
//!
//! Each user's history is partitioned by interest key into a two-level index
//! (`user_id → interest_key → InterestGroup`). The index keeps every group a
//! user has ever touched so that incremental updates stay exact; the
//! [`GroupedSequence`] served to the model is the top-`G` view by recency.

mod snapshot;
mod stats;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

pub use snapshot::{load_snapshot, save_snapshot, SnapshotManifest, SNAPSHOT_FORMAT_VERSION};
pub use stats::{compute_stats, GroupStats, NO_PURCHASE};

use crate::datamodel::{
    BehaviorEvent, BehaviorSequence, BehaviorType, CandidateItem, CategoryId, ItemId, KeyField, LocationCell,
    Timestamp, UserId,
};
use crate::error::{DginError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub key_field: KeyField,
    /// Maximum members kept per group.
    pub max_members: usize,
    /// Maximum groups served per user.
    pub max_groups: usize,
    /// Full-attribute events retained per group for candidate subsequences.
    pub subsequence_len: usize,
    /// Most recent raw events retained per user.
    pub raw_window: usize,
}

impl StoreConfig {
    pub fn new(key_field: KeyField, max_members: usize, max_groups: usize) -> Self {
        Self {
            key_field,
            max_members,
            max_groups,
            subsequence_len: 50,
            raw_window: 50,
        }
    }

    /// Industry-scale defaults.
    pub fn industry() -> Self {
        Self::new(KeyField::ItemId, 16, 256)
    }

    /// Small-test defaults.
    pub fn small() -> Self {
        Self::new(KeyField::ItemId, 8, 64)
    }

    fn category_mode(&self) -> bool {
        self.key_field == KeyField::CategoryId
    }
}

/// What a group member keeps: the spatio-temporal attributes fed to intra-group attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub timestamp: Timestamp,
    pub location_cell: LocationCell,
    pub behavior_type: BehaviorType,
    pub item_id: ItemId,
}

impl From<&BehaviorEvent> for MemberRecord {
    fn from(e: &BehaviorEvent) -> Self {
        Self {
            timestamp: e.timestamp,
            location_cell: e.location_cell,
            behavior_type: e.behavior_type,
            item_id: e.item_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityAttrs {
    /// Present in item-key mode.
    pub item_id: Option<ItemId>,
    pub category_id: CategoryId,
    /// Price of the most recent member.
    pub price_cents: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestGroup {
    pub interest_key: u64,
    pub identity: IdentityAttrs,
    /// Most recent members, chronological, at most `max_members`.
    pub members: Vec<MemberRecord>,
    /// Most recent full events, chronological, at most `subsequence_len`.
    pub recent_events: Vec<BehaviorEvent>,
    pub stats: GroupStats,
    pub last_active: Timestamp,
    /// Distinct items seen, category-key mode only.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub item_set: BTreeSet<ItemId>,
}

impl InterestGroup {
    fn identity_of(e: &BehaviorEvent, key_field: KeyField) -> IdentityAttrs {
        IdentityAttrs {
            item_id: (key_field == KeyField::ItemId).then_some(e.item_id),
            category_id: e.category_id,
            price_cents: e.price_cents,
        }
    }

    /// Builds a group from its complete member history in one pass.
    fn rebuild(key: u64, events: &[&BehaviorEvent], cfg: &StoreConfig) -> Result<Self> {
        let owned: Vec<BehaviorEvent> = events.iter().map(|e| **e).collect();
        let stats = compute_stats(&owned, cfg.category_mode())?;
        let last = owned.last().expect("nonempty");
        let tail = |n: usize| owned.len().saturating_sub(n);
        Ok(Self {
            interest_key: key,
            identity: Self::identity_of(last, cfg.key_field),
            members: owned[tail(cfg.max_members)..].iter().map(MemberRecord::from).collect(),
            recent_events: owned[tail(cfg.subsequence_len)..].to_vec(),
            stats,
            last_active: last.timestamp,
            item_set: if cfg.category_mode() {
                owned.iter().map(|e| e.item_id).collect()
            } else {
                BTreeSet::new()
            },
        })
    }

    fn empty(key: u64, first: &BehaviorEvent, cfg: &StoreConfig) -> Self {
        let cat = cfg.category_mode();
        Self {
            interest_key: key,
            identity: Self::identity_of(first, cfg.key_field),
            members: Vec::new(),
            recent_events: Vec::new(),
            stats: GroupStats {
                total_behaviors: 0,
                distinct_types: 0,
                per_type_counts: [0; BehaviorType::COUNT],
                avg_dwell_seconds: 0.0,
                avg_purchase_cents: NO_PURCHASE,
                distinct_item_count: cat.then_some(0),
                total_item_count: cat.then_some(0),
            },
            last_active: first.timestamp,
            item_set: BTreeSet::new(),
        }
    }

    fn append(&mut self, e: &BehaviorEvent, cfg: &StoreConfig) {
        let distinct = if cfg.category_mode() {
            self.item_set.insert(e.item_id);
            Some(self.item_set.len() as u64)
        } else {
            None
        };
        self.stats.absorb(e, distinct);
        push_bounded(&mut self.members, MemberRecord::from(e), cfg.max_members);
        push_bounded(&mut self.recent_events, *e, cfg.subsequence_len);
        self.identity = Self::identity_of(e, cfg.key_field);
        self.last_active = e.timestamp;
    }
}

fn push_bounded<T>(v: &mut Vec<T>, x: T, cap: usize) {
    v.push(x);
    if v.len() > cap {
        let excess = v.len() - cap;
        v.drain(..excess);
    }
}

/// Serving order: most recently active first, then larger groups, then smaller key.
pub fn group_order(a: &InterestGroup, b: &InterestGroup) -> Ordering {
    b.last_active
        .cmp(&a.last_active)
        .then(b.stats.total_behaviors.cmp(&a.stats.total_behaviors))
        .then(a.interest_key.cmp(&b.interest_key))
}

/// The model-facing view of one user's groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSequence {
    pub user_id: UserId,
    pub groups: Vec<InterestGroup>,
    /// Groups beyond `max_groups` left out of the view.
    pub dropped_groups: usize,
    /// Behaviors summarized by the dropped groups.
    pub dropped_behaviors: u64,
}

impl GroupedSequence {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    fn from_groups(user_id: UserId, mut groups: Vec<InterestGroup>, max_groups: usize) -> Self {
        groups.sort_by(group_order);
        let dropped: Vec<InterestGroup> = groups.split_off(groups.len().min(max_groups));
        Self {
            user_id,
            groups,
            dropped_groups: dropped.len(),
            dropped_behaviors: dropped.iter().map(|g| g.stats.total_behaviors).sum(),
        }
    }
}

/// One-shot grouping of a full sequence.
pub fn group_sequence(
    seq: &BehaviorSequence,
    key_field: KeyField,
    max_members: usize,
    max_groups: usize,
) -> GroupedSequence {
    let cfg = StoreConfig::new(key_field, max_members, max_groups);
    let groups = rebuild_groups(seq.events(), &cfg)
        .expect("groups are nonempty by construction")
        .into_values()
        .collect();
    GroupedSequence::from_groups(seq.user_id, groups, max_groups)
}

fn rebuild_groups(events: &[BehaviorEvent], cfg: &StoreConfig) -> Result<BTreeMap<u64, InterestGroup>> {
    let mut by_key: BTreeMap<u64, Vec<&BehaviorEvent>> = BTreeMap::new();
    for e in events {
        by_key.entry(e.key(cfg.key_field)).or_default().push(e);
    }
    by_key
        .into_iter()
        .map(|(k, evs)| InterestGroup::rebuild(k, &evs, cfg).map(|g| (k, g)))
        .collect()
}

/// All state the index keeps for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEntry {
    pub user_id: UserId,
    pub groups: BTreeMap<u64, InterestGroup>,
    pub total_events: u64,
    /// Most recent raw events, chronological, at most `raw_window`.
    pub recent_raw: Vec<BehaviorEvent>,
}

impl UserEntry {
    pub fn max_timestamp(&self) -> Option<Timestamp> {
        self.recent_raw.last().map(|e| e.timestamp)
    }

    fn new(user_id: UserId) -> Self {
        Self {
            user_id,
            groups: BTreeMap::new(),
            total_events: 0,
            recent_raw: Vec::new(),
        }
    }
}

/// An event refused by [`TwoLevelIndex::streaming_update`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub position: usize,
    pub user_id: UserId,
    pub timestamp: Timestamp,
    pub stored_max: Timestamp,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "event #{} for user {} at {} precedes stored history ending at {}",
            self.position, self.user_id, self.timestamp, self.stored_max
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub applied: usize,
    pub rejected: Vec<Rejection>,
}

/// Result of a candidate-keyed lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsequence {
    pub events: Vec<BehaviorEvent>,
    /// The user was unknown to the store.
    pub cold_start: bool,
}

/// `user_id → interest_key → InterestGroup`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelIndex {
    config: StoreConfig,
    users: BTreeMap<UserId, UserEntry>,
    as_of: Timestamp,
}

impl TwoLevelIndex {
    pub fn new(config: StoreConfig) -> Self {
        Self {
            config,
            users: BTreeMap::new(),
            as_of: 0,
        }
    }

    pub(crate) fn from_parts(config: StoreConfig, users: BTreeMap<UserId, UserEntry>, as_of: Timestamp) -> Self {
        Self { config, users, as_of }
    }

    /// One-shot build from per-user chronological histories.
    pub fn build(config: StoreConfig, histories: &BTreeMap<UserId, Vec<BehaviorEvent>>) -> Result<Self> {
        let mut index = Self::new(config);
        for (&user, events) in histories {
            let seq = BehaviorSequence::new(user, events.clone(), usize::MAX)?;
            if seq.is_empty() {
                continue;
            }
            let entry = UserEntry {
                user_id: user,
                groups: rebuild_groups(seq.events(), &config)?,
                total_events: seq.len() as u64,
                recent_raw: seq.events()[seq.len().saturating_sub(config.raw_window)..].to_vec(),
            };
            index.as_of = index.as_of.max(entry.max_timestamp().unwrap_or(0));
            index.users.insert(user, entry);
        }
        Ok(index)
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    /// Latest timestamp ingested; the reference point for event ages.
    pub fn as_of(&self) -> Timestamp {
        self.as_of
    }

    /// Moves the reference time forward without ingesting anything.
    pub fn advance_to(&mut self, ts: Timestamp) {
        self.as_of = self.as_of.max(ts);
    }

    pub fn user(&self, user: UserId) -> Option<&UserEntry> {
        self.users.get(&user)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserEntry> {
        self.users.values()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn lookup(&self, user: UserId, key: u64) -> Option<&InterestGroup> {
        self.users.get(&user)?.groups.get(&key)
    }

    /// Folds a batch of events in, in order. Events earlier than the user's
    /// stored history are rejected individually; the rest still apply.
    pub fn streaming_update(&mut self, batch: impl IntoIterator<Item = (UserId, BehaviorEvent)>) -> UpdateReport {
        let cfg = self.config;
        let mut report = UpdateReport::default();
        for (position, (user, e)) in batch.into_iter().enumerate() {
            let entry = self.users.entry(user).or_insert_with(|| UserEntry::new(user));
            if let Some(max) = entry.max_timestamp() {
                if e.timestamp < max {
                    report.rejected.push(Rejection {
                        position,
                        user_id: user,
                        timestamp: e.timestamp,
                        stored_max: max,
                    });
                    continue;
                }
            }
            let key = e.key(cfg.key_field);
            entry
                .groups
                .entry(key)
                .or_insert_with(|| InterestGroup::empty(key, &e, &cfg))
                .append(&e, &cfg);
            entry.total_events += 1;
            push_bounded(&mut entry.recent_raw, e, cfg.raw_window);
            self.as_of = self.as_of.max(e.timestamp);
            report.applied += 1;
        }
        report
    }

    /// The top-`max_groups` view for `user`; empty for unknown users.
    pub fn grouped(&self, user: UserId) -> GroupedSequence {
        match self.users.get(&user) {
            None => GroupedSequence {
                user_id: user,
                groups: Vec::new(),
                dropped_groups: 0,
                dropped_behaviors: 0,
            },
            Some(entry) => {
                GroupedSequence::from_groups(user, entry.groups.values().cloned().collect(), self.config.max_groups)
            }
        }
    }

    /// Borrowed form of [`TwoLevelIndex::grouped`]: the top groups in serving order.
    pub fn top_groups(&self, user: UserId) -> Vec<&InterestGroup> {
        let Some(entry) = self.users.get(&user) else {
            return Vec::new();
        };
        let mut groups: Vec<&InterestGroup> = entry.groups.values().collect();
        groups.sort_by(|a, b| group_order(a, b));
        groups.truncate(self.config.max_groups);
        groups
    }

    /// The most recent `limit` full events sharing the candidate's interest key,
    /// chronological. `limit` is capped by the store's retained subsequence length.
    pub fn candidate_subsequence(
        &self,
        user: UserId,
        candidate: &CandidateItem,
        key_field: KeyField,
        limit: usize,
    ) -> Result<Subsequence> {
        if key_field != self.config.key_field {
            return Err(DginError::Config(format!(
                "store is keyed by {}, lookup asked for {}",
                self.config.key_field.name(),
                key_field.name()
            )));
        }
        let Some(entry) = self.users.get(&user) else {
            return Ok(Subsequence {
                events: Vec::new(),
                cold_start: true,
            });
        };
        let events = entry
            .groups
            .get(&candidate.key(key_field))
            .map(|g| g.recent_events[g.recent_events.len().saturating_sub(limit)..].to_vec())
            .unwrap_or_default();
        Ok(Subsequence {
            events,
            cold_start: false,
        })
    }

    /// The user's most recent `limit` raw events, chronological.
    pub fn recent_behaviors(&self, user: UserId, limit: usize) -> &[BehaviorEvent] {
        self.users
            .get(&user)
            .map(|e| &e.recent_raw[e.recent_raw.len().saturating_sub(limit)..])
            .unwrap_or(&[])
    }

    /// Field-by-field comparison allowing `tol` on floating statistics.
    /// Returns the first difference found.
    pub fn equivalent(&self, other: &TwoLevelIndex, tol: f64) -> std::result::Result<(), String> {
        if self.config != other.config {
            return Err("configs differ".into());
        }
        if self.as_of != other.as_of {
            return Err(format!("as_of {} vs {}", self.as_of, other.as_of));
        }
        if self.users.len() != other.users.len() {
            return Err(format!("{} vs {} users", self.users.len(), other.users.len()));
        }
        for (u, a) in &self.users {
            let b = other.users.get(u).ok_or_else(|| format!("user {u} missing"))?;
            if a.total_events != b.total_events || a.recent_raw != b.recent_raw {
                return Err(format!("user {u}: event totals or raw window differ"));
            }
            if a.groups.len() != b.groups.len() {
                return Err(format!("user {u}: group counts differ"));
            }
            for (k, ga) in &a.groups {
                let gb = b.groups.get(k).ok_or_else(|| format!("user {u}: group {k} missing"))?;
                groups_equivalent(ga, gb, tol).map_err(|e| format!("user {u} group {k}: {e}"))?;
            }
        }
        Ok(())
    }
}

fn groups_equivalent(a: &InterestGroup, b: &InterestGroup, tol: f64) -> std::result::Result<(), String> {
    let (sa, sb) = (&a.stats, &b.stats);
    let exact = a.interest_key == b.interest_key
        && a.identity == b.identity
        && a.members == b.members
        && a.recent_events == b.recent_events
        && a.last_active == b.last_active
        && a.item_set == b.item_set
        && sa.total_behaviors == sb.total_behaviors
        && sa.distinct_types == sb.distinct_types
        && sa.per_type_counts == sb.per_type_counts
        && sa.distinct_item_count == sb.distinct_item_count
        && sa.total_item_count == sb.total_item_count;
    if !exact {
        return Err("integer fields differ".into());
    }
    let close = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0);
    if !close(sa.avg_dwell_seconds, sb.avg_dwell_seconds) || !close(sa.avg_purchase_cents, sb.avg_purchase_cents) {
        return Err(format!(
            "averages differ: dwell {} vs {}, purchase {} vs {}",
            sa.avg_dwell_seconds, sb.avg_dwell_seconds, sa.avg_purchase_cents, sb.avg_purchase_cents
        ));
    }
    Ok(())
}

/// Readers share an immutable snapshot; an update clones, applies, and swaps.
#[derive(Debug)]
pub struct StoreHandle {
    current: RwLock<Arc<TwoLevelIndex>>,
}

impl StoreHandle {
    pub fn new(index: TwoLevelIndex) -> Self {
        Self {
            current: RwLock::new(Arc::new(index)),
        }
    }

    pub fn snapshot(&self) -> Arc<TwoLevelIndex> {
        Arc::clone(&self.current.read().expect("store lock poisoned"))
    }

    pub fn apply(&self, batch: impl IntoIterator<Item = (UserId, BehaviorEvent)>) -> UpdateReport {
        let mut next = (*self.snapshot()).clone();
        let report = next.streaming_update(batch);
        *self.current.write().expect("store lock poisoned") = Arc::new(next);
        report
    }
}
