use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, written as `manifest.json` under `--out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Hash of the effective configuration text after flag overrides.
    pub config_hash: String,
    pub config: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    /// Deterministic outputs; identical inputs give identical hashes.
    pub artifacts: Vec<FileHash>,
    /// Outputs that carry wall-clock timings and are not hashed.
    pub logs: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub exit_code: i32,
}

/// Git-style object hash: SHA-256 over `blob <len>\0` followed by the content.
pub fn content_hash(path: &Path) -> io::Result<String> {
    let len = path.metadata()?.len();
    let mut h = Sha256::new();
    h.update(format!("blob {len}\0").as_bytes());
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hashes each existing path; directories contribute every file inside, sorted.
pub fn hash_paths(paths: &[PathBuf]) -> io::Result<Vec<FileHash>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            entries.sort();
            out.extend(hash_paths(&entries)?);
        } else if p.is_file() {
            out.push(FileHash {
                path: p.clone(),
                sha256: content_hash(p)?,
            });
        }
    }
    Ok(out)
}
