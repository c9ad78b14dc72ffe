//! Behavior events, lifelong sequences, candidates and labeled instances,
//! with their JSON-lines file formats.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DginError, Result};
use crate::store::TwoLevelIndex;

pub type UserId = u64;
pub type ItemId = u64;
pub type CategoryId = u64;
pub type LocationCell = u64;
pub type Timestamp = i64;

/// The six interaction kinds, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorType {
    Click,
    AddToCart,
    AddToFavorite,
    BrowseDishes,
    ViewComments,
    Purchase,
}

impl BehaviorType {
    pub const ALL: [BehaviorType; 6] = [
        BehaviorType::Click,
        BehaviorType::AddToCart,
        BehaviorType::AddToFavorite,
        BehaviorType::BrowseDishes,
        BehaviorType::ViewComments,
        BehaviorType::Purchase,
    ];
    pub const COUNT: usize = 6;

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BehaviorType::Click => "click",
            BehaviorType::AddToCart => "add_to_cart",
            BehaviorType::AddToFavorite => "add_to_favorite",
            BehaviorType::BrowseDishes => "browse_dishes",
            BehaviorType::ViewComments => "view_comments",
            BehaviorType::Purchase => "purchase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub item_id: ItemId,
    pub category_id: CategoryId,
    /// Nonzero only for purchases.
    pub price_cents: u64,
    pub timestamp: Timestamp,
    pub location_cell: LocationCell,
    pub behavior_type: BehaviorType,
    /// Zero when unknown.
    pub dwell_seconds: u64,
}

impl BehaviorEvent {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp <= 0 {
            return Err(format!("timestamp {} is not positive", self.timestamp));
        }
        if self.price_cents > 0 && self.behavior_type != BehaviorType::Purchase {
            return Err(format!(
                "price_cents {} on a {} event",
                self.price_cents,
                self.behavior_type.name()
            ));
        }
        Ok(())
    }

    pub fn key(&self, field: KeyField) -> u64 {
        match field {
            KeyField::ItemId => self.item_id,
            KeyField::CategoryId => self.category_id,
        }
    }
}

/// The attribute that partitions a sequence into interest groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyField {
    ItemId,
    CategoryId,
}

impl KeyField {
    pub fn name(self) -> &'static str {
        match self {
            KeyField::ItemId => "item_id",
            KeyField::CategoryId => "category_id",
        }
    }
}

impl std::str::FromStr for KeyField {
    type Err = DginError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item_id" => Ok(KeyField::ItemId),
            "category_id" => Ok(KeyField::CategoryId),
            other => Err(DginError::Config(format!(
                "key field must be item_id or category_id, got `{other}`"
            ))),
        }
    }
}

/// One user's chronologically ordered lifelong history.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSequence {
    pub user_id: UserId,
    events: Vec<BehaviorEvent>,
}

impl BehaviorSequence {
    pub fn new(user_id: UserId, events: Vec<BehaviorEvent>, max_len: usize) -> Result<Self> {
        if let Some(w) = events.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(DginError::Precondition(format!(
                "user {user_id}: event {} is earlier than its predecessor",
                w + 1
            )));
        }
        if events.len() > max_len {
            return Err(DginError::Precondition(format!(
                "user {user_id}: {} events exceeds max lifelong length {max_len}",
                events.len()
            )));
        }
        Ok(Self { user_id, events })
    }

    pub fn events(&self) -> &[BehaviorEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateItem {
    pub item_id: ItemId,
    pub category_id: CategoryId,
    pub price_cents: u64,
    pub location_cell: LocationCell,
}

impl CandidateItem {
    pub fn key(&self, field: KeyField) -> u64 {
        match field {
            KeyField::ItemId => self.item_id,
            KeyField::CategoryId => self.category_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Context {
    /// 0..168, Monday 00:00 UTC = 0.
    pub hour_of_week: u32,
    pub surface_id: u32,
}

/// One labeled example. User features are derived from `user_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub user_id: UserId,
    pub candidate: CandidateItem,
    pub context: Context,
    pub decision_timestamp: Timestamp,
    pub label: u32,
}

impl Instance {
    pub fn label_f64(&self) -> f64 {
        self.label as f64
    }
}

/// Wire form of one event-log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub category_id: CategoryId,
    pub price_cents: u64,
    pub timestamp: Timestamp,
    pub location_cell: LocationCell,
    pub behavior_type: BehaviorType,
    pub dwell_seconds: u64,
}

impl EventRecord {
    pub fn new(user_id: UserId, e: &BehaviorEvent) -> Self {
        Self {
            user_id,
            item_id: e.item_id,
            category_id: e.category_id,
            price_cents: e.price_cents,
            timestamp: e.timestamp,
            location_cell: e.location_cell,
            behavior_type: e.behavior_type,
            dwell_seconds: e.dwell_seconds,
        }
    }

    pub fn split(self) -> (UserId, BehaviorEvent) {
        (
            self.user_id,
            BehaviorEvent {
                item_id: self.item_id,
                category_id: self.category_id,
                price_cents: self.price_cents,
                timestamp: self.timestamp,
                location_cell: self.location_cell,
                behavior_type: self.behavior_type,
                dwell_seconds: self.dwell_seconds,
            },
        )
    }
}

pub fn serialize_event(user_id: UserId, e: &BehaviorEvent) -> String {
    serde_json::to_string(&EventRecord::new(user_id, e)).expect("event serializes")
}

pub fn parse_event_line(line: &str) -> std::result::Result<(UserId, BehaviorEvent), String> {
    let rec: EventRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let (user, event) = rec.split();
    event.validate()?;
    Ok((user, event))
}

/// Fraction of malformed lines above which a log is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Streaming reader over an event log. Malformed lines are skipped and counted.
pub struct EventLogReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    pub total: usize,
    pub malformed: usize,
    pub first_error: Option<(usize, String)>,
}

impl EventLogReader {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| DginError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(f).lines(),
            line_no: 0,
            total: 0,
            malformed: 0,
            first_error: None,
        })
    }

    /// Applies the malformed-fraction rule once the stream is drained.
    pub fn finish(&self) -> Result<()> {
        if self.total > 0 && self.malformed as f64 > MAX_MALFORMED_FRACTION * self.total as f64 {
            let (line, err) = self.first_error.clone().unwrap_or_default();
            return Err(DginError::TooManyMalformed {
                path: self.path.clone(),
                malformed: self.malformed,
                total: self.total,
                first_line: line,
                first_error: err,
            });
        }
        Ok(())
    }
}

impl Iterator for EventLogReader {
    type Item = Result<(UserId, BehaviorEvent)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(DginError::io(&self.path, e))),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            self.total += 1;
            match parse_event_line(&line) {
                Ok(rec) => return Some(Ok(rec)),
                Err(err) => {
                    self.malformed += 1;
                    if self.first_error.is_none() {
                        self.first_error = Some((self.line_no, err));
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub events: Vec<(UserId, BehaviorEvent)>,
    pub total: usize,
    pub malformed: usize,
}

/// Reads a whole event log in file order.
pub fn parse_event_log(path: &Path) -> Result<ParsedLog> {
    let mut reader = EventLogReader::open(path)?;
    let events = reader.by_ref().collect::<Result<Vec<_>>>()?;
    reader.finish()?;
    Ok(ParsedLog {
        events,
        total: reader.total,
        malformed: reader.malformed,
    })
}

pub fn write_event_log<'a>(path: &Path, events: impl IntoIterator<Item = (UserId, &'a BehaviorEvent)>) -> Result<()> {
    let f = File::create(path).map_err(|e| DginError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (u, e) in events {
        writeln!(w, "{}", serialize_event(u, e)).map_err(|e| DginError::io(path, e))?;
    }
    w.flush().map_err(|e| DginError::io(path, e))
}

/// Splits a flat event stream per user, keeping each user's events in input order.
pub fn group_by_user(
    events: impl IntoIterator<Item = (UserId, BehaviorEvent)>,
) -> BTreeMap<UserId, Vec<BehaviorEvent>> {
    let mut out: BTreeMap<UserId, Vec<BehaviorEvent>> = BTreeMap::new();
    for (u, e) in events {
        out.entry(u).or_default().push(e);
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| DginError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| DginError::io(path, e))?;
    }
    w.flush().map_err(|e| DginError::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| DginError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DginError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DginError::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    read_jsonl(path)
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    write_jsonl(path, instances)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownUser(UserId),
    LabelOutOfRange(u32),
    /// An event in the user's stored history is at or after the decision time.
    FutureLeakage {
        event_timestamp: Timestamp,
        decision_timestamp: Timestamp,
    },
}

/// Every invariant the instance breaks against `store`; empty means valid.
pub fn validate_instance(instance: &Instance, store: &TwoLevelIndex) -> Vec<Violation> {
    let mut out = Vec::new();
    if instance.label > 1 {
        out.push(Violation::LabelOutOfRange(instance.label));
    }
    match store.user(instance.user_id) {
        None => out.push(Violation::UnknownUser(instance.user_id)),
        Some(entry) => {
            if let Some(ts) = entry.max_timestamp() {
                if ts >= instance.decision_timestamp {
                    out.push(Violation::FutureLeakage {
                        event_timestamp: ts,
                        decision_timestamp: instance.decision_timestamp,
                    });
                }
            }
        }
    }
    out
}
