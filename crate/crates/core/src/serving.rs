//! Precomputed group representations for serving.
//!
//! A cache is a JSON manifest plus a little-endian `f64` blob holding each
//! user's `e_g` rows back to back. Forward passes that read the cache must
//! reproduce the on-the-fly group interest bit for bit.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{Instance, Timestamp, UserId};
use crate::error::{DginError, Result};
use crate::model::Dgin;
use crate::numerics::Tape;
use crate::store::TwoLevelIndex;

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    user_id: UserId,
    rows: usize,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheManifest {
    format_version: u32,
    schema_hash: String,
    width: usize,
    as_of: Timestamp,
    entries: Vec<CacheEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCache {
    pub schema_hash: String,
    pub width: usize,
    pub as_of: Timestamp,
    rows: BTreeMap<UserId, Vec<f64>>,
}

impl GroupCache {
    /// Computes `e_g` for every user in `store`.
    pub fn build(model: &Dgin, store: &TwoLevelIndex) -> Result<Self> {
        let gm = model
            .group_module
            .as_ref()
            .ok_or_else(|| DginError::Config(format!("variant {} has no group module", model.config.variant)))?;
        let mut rows = BTreeMap::new();
        for entry in store.users() {
            let grid = model.user_group_rows(store, entry.user_id)?;
            rows.insert(entry.user_id, grid.into_values());
        }
        Ok(Self {
            schema_hash: model.schema_hash(),
            width: gm.layout.width(),
            as_of: store.as_of(),
            rows,
        })
    }

    pub fn rows(&self, user: UserId) -> Option<&[f64]> {
        self.rows.get(&user).map(Vec::as_slice)
    }

    pub fn user_count(&self) -> usize {
        self.rows.len()
    }

    pub fn blob_path(manifest: &Path) -> PathBuf {
        manifest.with_extension("bin")
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let blob = Self::blob_path(manifest);
        let mut w = BufWriter::new(File::create(&blob).map_err(|e| DginError::io(&blob, e))?);
        let mut entries = Vec::with_capacity(self.rows.len());
        let mut offset = 0;
        for (&user_id, values) in &self.rows {
            for v in values {
                w.write_all(&v.to_le_bytes()).map_err(|e| DginError::io(&blob, e))?;
            }
            entries.push(CacheEntry {
                user_id,
                rows: values.len() / self.width.max(1),
                offset,
            });
            offset += values.len();
        }
        w.flush().map_err(|e| DginError::io(&blob, e))?;
        let m = CacheManifest {
            format_version: CACHE_FORMAT_VERSION,
            schema_hash: self.schema_hash.clone(),
            width: self.width,
            as_of: self.as_of,
            entries,
        };
        fs::write(manifest, serde_json::to_vec_pretty(&m)?).map_err(|e| DginError::io(manifest, e))
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = fs::read(manifest).map_err(|e| DginError::io(manifest, e))?;
        let m: CacheManifest = serde_json::from_slice(&text)?;
        if m.format_version != CACHE_FORMAT_VERSION {
            return Err(DginError::Parse(format!(
                "cache format version {} not supported",
                m.format_version
            )));
        }
        let blob = Self::blob_path(manifest);
        let mut bytes = Vec::new();
        File::open(&blob)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| DginError::io(&blob, e))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut rows = BTreeMap::new();
        for e in m.entries {
            let end = e.offset + e.rows * m.width;
            if end > values.len() {
                return Err(DginError::Parse(format!(
                    "cache entry for user {} runs past the blob",
                    e.user_id
                )));
            }
            rows.insert(e.user_id, values[e.offset..end].to_vec());
        }
        Ok(Self {
            schema_hash: m.schema_hash,
            width: m.width,
            as_of: m.as_of,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheCheckReport {
    pub instances: usize,
    pub mismatched_values: usize,
    pub max_abs_diff: f64,
}

impl CacheCheckReport {
    pub fn bit_exact(&self) -> bool {
        self.mismatched_values == 0
    }
}

/// Compares group interest and logits computed from `cache` with fresh ones.
pub fn cache_check(
    model: &Dgin,
    store: &TwoLevelIndex,
    cache: &GroupCache,
    instances: &[Instance],
) -> Result<CacheCheckReport> {
    if cache.schema_hash != model.schema_hash() {
        return Err(DginError::SchemaMismatch {
            expected: model.schema_hash(),
            found: cache.schema_hash.clone(),
        });
    }
    if cache.as_of != store.as_of() {
        return Err(DginError::Precondition(format!(
            "cache built as of {}, store is as of {}",
            cache.as_of,
            store.as_of()
        )));
    }
    let mut report = CacheCheckReport {
        instances: 0,
        mismatched_values: 0,
        max_abs_diff: 0.0,
    };
    for chunk in instances.chunks(model.config.batch_size) {
        let mut fresh_tape = Tape::new(&model.params);
        let fresh = model.forward_tape(&mut fresh_tape, store, chunk, None)?;
        let mut cached_tape = Tape::new(&model.params);
        let cached = model.forward_tape(&mut cached_tape, store, chunk, Some(cache))?;
        let pairs = [
            (fresh.interest_gm, cached.interest_gm),
            (Some(fresh.logits), Some(cached.logits)),
        ];
        for (a, b) in pairs {
            let (Some(a), Some(b)) = (a, b) else { continue };
            for (x, y) in fresh_tape.value(a).values().iter().zip(cached_tape.value(b).values()) {
                if x.to_bits() != y.to_bits() {
                    report.mismatched_values += 1;
                    report.max_abs_diff = report.max_abs_diff.max((x - y).abs());
                }
            }
        }
        report.instances += chunk.len();
    }
    Ok(report)
}
