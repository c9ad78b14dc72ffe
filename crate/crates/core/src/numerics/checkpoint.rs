//! Checkpoint files: a text manifest plus a blob of little-endian `f64`.
//!
//! ```text
//! dgin-checkpoint 1
//! schema <hex hash>
//! <name> <rows> <cols> <byte offset>
//! ...
//! ```
//!
//! The blob lives next to the manifest with the `.bin` extension.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::grid::ValueGrid;
use super::params::{ParamSet, Parameter};
use crate::error::{DginError, Result};

const MAGIC: &str = "dgin-checkpoint 1";

pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save(params: &ParamSet, schema_hash: &str, manifest: &Path) -> Result<()> {
    let mut text = format!("{MAGIC}\nschema {schema_hash}\n");
    let mut blob = Vec::with_capacity(params.coordinate_count() * 8);
    for (_, p) in params.iter() {
        let (r, c) = p.shape();
        text.push_str(&format!("{} {} {} {}\n", p.name, r, c, blob.len()));
        for v in p.grid.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let blob_file = blob_path(manifest);
    fs::File::create(&blob_file)
        .and_then(|mut f| f.write_all(&blob))
        .map_err(|e| DginError::io(&blob_file, e))?;
    fs::write(manifest, text).map_err(|e| DginError::io(manifest, e))
}

/// Reads a checkpoint. Returns the schema hash and the parameter grids in
/// manifest order; optimizer state starts fresh.
pub fn load(manifest: &Path) -> Result<(String, ParamSet)> {
    let text = fs::read_to_string(manifest).map_err(|e| DginError::io(manifest, e))?;
    let blob_file = blob_path(manifest);
    let blob = fs::read(&blob_file).map_err(|e| DginError::io(&blob_file, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(DginError::Parse(format!(
            "{}: bad checkpoint header",
            manifest.display()
        )));
    }
    let schema = lines
        .next()
        .and_then(|l| l.strip_prefix("schema "))
        .ok_or_else(|| DginError::Parse("checkpoint missing schema line".into()))?
        .to_string();
    let mut params = ParamSet::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, rows, cols, offset] = fields[..] else {
            return Err(DginError::Parse(format!("bad manifest line `{line}`")));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| DginError::Parse(format!("`{line}`: {e}")))
        };
        let (rows, cols, offset) = (parse(rows)?, parse(cols)?, parse(offset)?);
        let end = offset + rows * cols * 8;
        if end > blob.len() {
            return Err(DginError::Parse(format!("`{name}` runs past end of blob")));
        }
        let values = blob[offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.insert(Parameter::new(name, ValueGrid::from_vec(rows, cols, values)?))?;
    }
    Ok((schema, params))
}

/// Overwrites the grids of `params` from a checkpoint, refusing a different schema
/// or any name/shape disagreement.
pub fn restore_into(params: &mut ParamSet, schema_hash: &str, manifest: &Path) -> Result<()> {
    let (saved_schema, saved) = load(manifest)?;
    if saved_schema != schema_hash {
        return Err(DginError::SchemaMismatch {
            expected: saved_schema,
            found: schema_hash.to_string(),
        });
    }
    if saved.len() != params.len() {
        return Err(DginError::Config(format!(
            "checkpoint has {} parameters, model has {}",
            saved.len(),
            params.len()
        )));
    }
    for (_, p) in saved.iter() {
        let id = params
            .id(&p.name)
            .ok_or_else(|| DginError::Config(format!("unknown parameter `{}`", p.name)))?;
        let target = params.get_mut(id);
        if target.shape() != p.shape() {
            return Err(DginError::Dimension {
                op: "restore_into",
                left: target.shape(),
                right: p.shape(),
            });
        }
        target.grid = p.grid.clone();
    }
    Ok(())
}
