//! One JSON manifest per artifact-producing run.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct HashedFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl HashedFile {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(HashedFile {
            path: path.to_path_buf(),
            sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

/// Everything needed to rerun and check a command. Only `started_unix` and
/// `wall_clock_seconds` differ between identical reruns.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize, S: Serialize> {
    pub command: &'static str,
    pub tool_version: &'static str,
    pub config: C,
    pub model: HashedFile,
    pub datasets: Vec<HashedFile>,
    pub outputs: Vec<HashedFile>,
    pub summary: S,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

pub struct Clock {
    started_unix: u64,
    start: Instant,
}

impl Clock {
    pub fn start() -> Self {
        Clock {
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            start: Instant::now(),
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn write_manifest<C: Serialize, S: Serialize>(
    path: &Path,
    command: &'static str,
    config: C,
    model: &Path,
    datasets: &[PathBuf],
    outputs: &[PathBuf],
    summary: S,
    clock: &Clock,
) -> Result<()> {
    let mut unique: Vec<&PathBuf> = datasets.iter().collect();
    unique.sort();
    unique.dedup();
    let manifest = RunManifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        model: HashedFile::of(model)?,
        datasets: unique.into_iter().map(|p| HashedFile::of(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| HashedFile::of(p)).collect::<Result<_>>()?,
        summary,
        started_unix: clock.started_unix,
        wall_clock_seconds: clock.start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
