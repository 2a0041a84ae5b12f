//! Versioned run manifest and the per-directory lock.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::text::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".redbench.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_digest: String,
    pub completed_at: u64,
    /// Digests of the upstream artifacts the stage read.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVersion {
    pub version: u32,
    pub tool_version: String,
    pub created_at: u64,
    pub command: String,
    pub seed: u64,
    pub backend: String,
    pub config_digest: String,
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl ManifestVersion {
    /// Artifact name to digest over every recorded stage.
    pub fn artifact_digests(&self) -> BTreeMap<String, String> {
        self.stages.values().flat_map(|s| s.artifacts.iter().map(|(k, v)| (k.clone(), v.clone()))).collect()
    }

    /// The stage that produced `artifact`, if any.
    pub fn producer(&self, artifact: &str) -> Option<&str> {
        self.stages.iter().find(|(_, s)| s.artifacts.contains_key(artifact)).map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub versions: Vec<ManifestVersion>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> io::Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        crate::io::read_json(&path)
    }

    pub fn save(&self, run_dir: &Path) -> io::Result<()> {
        crate::io::write_json(&run_dir.join(MANIFEST_FILE), self)
    }

    pub fn latest(&self) -> Option<&ManifestVersion> {
        self.versions.last()
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn file_digest(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Held for the lifetime of one subcommand; removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path)?;
        io::Write::write_all(&mut f, std::process::id().to_string().as_bytes())?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
