//! Snapshot file: one JSON manifest line, then one JSON line per user.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StoreConfig, TwoLevelIndex, UserEntry};
use crate::datamodel::{KeyField, Timestamp};
use crate::error::{DginError, Result};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format_version: u32,
    pub key_field: KeyField,
    #[serde(rename = "B")]
    pub max_members: usize,
    #[serde(rename = "G")]
    pub max_groups: usize,
    #[serde(rename = "T")]
    pub subsequence_len: usize,
    pub raw_window: usize,
    pub as_of: Timestamp,
    pub users: usize,
}

pub fn save_snapshot(index: &TwoLevelIndex, path: &Path) -> Result<()> {
    let cfg = index.config();
    let manifest = SnapshotManifest {
        format_version: SNAPSHOT_FORMAT_VERSION,
        key_field: cfg.key_field,
        max_members: cfg.max_members,
        max_groups: cfg.max_groups,
        subsequence_len: cfg.subsequence_len,
        raw_window: cfg.raw_window,
        as_of: index.as_of(),
        users: index.user_count(),
    };
    let f = File::create(path).map_err(|e| DginError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &manifest)?;
    w.write_all(b"\n").map_err(|e| DginError::io(path, e))?;
    for entry in index.users() {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n").map_err(|e| DginError::io(path, e))?;
    }
    w.flush().map_err(|e| DginError::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<TwoLevelIndex> {
    let f = File::open(path).map_err(|e| DginError::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines
        .next()
        .ok_or_else(|| DginError::Parse(format!("{}: empty snapshot", path.display())))?
        .map_err(|e| DginError::io(path, e))?;
    let m: SnapshotManifest = serde_json::from_str(&header)?;
    if m.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(DginError::Parse(format!(
            "snapshot format version {} not supported",
            m.format_version
        )));
    }
    let config = StoreConfig {
        key_field: m.key_field,
        max_members: m.max_members,
        max_groups: m.max_groups,
        subsequence_len: m.subsequence_len,
        raw_window: m.raw_window,
    };
    let mut users = BTreeMap::new();
    for line in lines {
        let line = line.map_err(|e| DginError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: UserEntry = serde_json::from_str(&line)?;
        users.insert(entry.user_id, entry);
    }
    if users.len() != m.users {
        return Err(DginError::Parse(format!(
            "snapshot manifest promises {} users, found {}",
            m.users,
            users.len()
        )));
    }
    Ok(TwoLevelIndex::from_parts(config, users, m.as_of))
}
