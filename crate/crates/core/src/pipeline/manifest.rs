//! Run manifest and run-directory lock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::hashing::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the configuration this stage depends on.
    pub config_hash: String,
    /// Upstream artifacts (and external inputs) with the hashes they had
    /// when this stage ran.
    pub inputs: BTreeMap<String, String>,
    /// Run-relative artifact paths with content hashes.
    pub artifacts: BTreeMap<String, String>,
    pub completed_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub interpreter_version: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
    pub updated_at: Option<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn file_hash(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| PipelineError::Artifact(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(RunManifest::default()),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    pub fn save(&mut self, run_dir: &Path) -> Result<(), PipelineError> {
        self.updated_at = Some(now());
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        crate::atomic::write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))
    }

    /// Artifacts of `stage` whose on-disk hash differs from the record, as
    /// `(path, recorded, found)`.
    pub fn drifted_artifacts(&self, run_dir: &Path, stage: &str) -> Vec<(String, String, String)> {
        let Some(rec) = self.stages.get(stage) else { return Vec::new() };
        rec.artifacts
            .iter()
            .filter_map(|(rel, hash)| {
                let found = file_hash(&run_dir.join(rel)).unwrap_or_else(|| "missing".into());
                (found != *hash).then(|| (rel.clone(), hash.clone(), found))
            })
            .collect()
    }
}

/// Exclusive ownership of a run directory for one process.
pub struct RunLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    !Path::new("/proc").exists() || Path::new(&format!("/proc/{pid}")).exists()
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(run_dir).map_err(|e| PipelineError::io(run_dir, e))?;
        let path = run_dir.join(LOCK_FILE);
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if !pid_alive(pid) => {
                            tracing::warn!(pid, "removing stale run lock");
                            let _ = fs::remove_file(&path);
                        }
                        _ => {
                            return Err(PipelineError::Locked(path.clone()));
                        }
                    }
                }
                Err(e) => return Err(PipelineError::io(&path, e)),
            }
        }
        Err(PipelineError::Locked(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
