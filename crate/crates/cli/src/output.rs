//! Artifact writing: atomic files, manifests, check summaries and seed streams.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// One pass/fail acceptance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub checks: Vec<Check>,
    /// Per-cell solver failures; any entry makes the run a hard failure.
    pub failures: Vec<String>,
    pub all_passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub library_version: String,
    pub artifacts: Vec<String>,
    pub wall_time_seconds: f64,
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().context("flushing csv buffer")?;
    write_atomic(path, &bytes)
}

/// Seed of the named stream `(kind, cell)` derived from the run seed.
pub fn stream_seed(seed: u64, kind: &str, cell: u64) -> u64 {
    // FNV-1a keeps the stream id stable across platforms and releases.
    let mut id: u64 = 0xcbf2_9ce4_8422_2325;
    for b in kind.bytes() {
        id ^= b as u64;
        id = id.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id ^ cell.rotate_left(32));
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_stable_and_distinct() {
        assert_eq!(stream_seed(1, "minimize", 0), stream_seed(1, "minimize", 0));
        assert_ne!(stream_seed(1, "minimize", 0), stream_seed(1, "minimize", 1));
        assert_ne!(stream_seed(1, "minimize", 0), stream_seed(1, "barrier", 0));
        assert_ne!(stream_seed(1, "minimize", 0), stream_seed(2, "minimize", 0));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        write_json(&p, &vec![1, 2]).unwrap();
        assert!(p.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
