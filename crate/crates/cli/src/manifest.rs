//! Run manifest: written when a command starts and rewritten when it ends.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Digest of command, config and seeds: reruns share an id.
    pub run_id: String,
    pub command: String,
    pub status: RunStatus,
    pub code_version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    pub timings: Timings,
}

/// Open manifest plus the clock it finishes against.
pub struct ManifestWriter {
    pub manifest: RunManifest,
    dir: PathBuf,
    started: Instant,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial manifest.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

impl ManifestWriter {
    pub fn start(dir: &Path, command: &str, config: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
        let config = serde_json::to_value(config)?;
        let digest = format!("{command}\n{config}\n{seeds:?}");
        let manifest = RunManifest {
            run_id: format!("{command}-{:016x}", fnv1a(digest.as_bytes())),
            command: command.to_string(),
            status: RunStatus::Running,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            config,
            seeds,
            artifacts: Vec::new(),
            timings: Timings { started_unix_ms: unix_ms(), finished_unix_ms: None, wall_seconds: None },
        };
        let w = ManifestWriter { manifest, dir: dir.to_path_buf(), started: Instant::now() };
        w.write()?;
        Ok(w)
    }

    fn write(&self) -> Result<()> {
        write_atomic(&self.dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&self.manifest)?)
    }

    /// Records `artifacts` (paths inside the run directory) and marks the run
    /// complete.
    pub fn finish(mut self, artifacts: impl IntoIterator<Item = PathBuf>) -> Result<RunManifest> {
        self.manifest.artifacts = artifacts
            .into_iter()
            .map(|p| p.strip_prefix(&self.dir).map(Path::to_path_buf).unwrap_or(p))
            .collect();
        self.manifest.status = RunStatus::Complete;
        self.manifest.timings.finished_unix_ms = Some(unix_ms());
        self.manifest.timings.wall_seconds = Some(self.started.elapsed().as_secs_f64());
        self.write()?;
        Ok(self.manifest)
    }
}

pub fn read(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&text)?)
}
