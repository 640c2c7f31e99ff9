//! The run manifest: what ran, when, with which config, and digests of
//! everything it wrote.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};
use crate::formats::{json_offset, write_atomic};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory for outputs, as given for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    pub wall_ms: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub mode: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<Artifact>,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).at(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl RunManifest {
    pub fn new(command: &str, mode: Option<&str>, config_hash: String, seed: u64, inputs: Vec<Artifact>) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            mode: mode.map(str::to_string),
            config_hash,
            seed,
            inputs,
            stages: Vec::new(),
        }
    }

    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join(MANIFEST_FILE)
    }

    /// Reads and version-checks the manifest of `run_dir`.
    pub fn load(run_dir: &Path) -> Result<RunManifest> {
        let path = RunManifest::path(run_dir);
        let bytes = fs::read(&path).at(&path)?;
        let parse_err = |e: serde_json::Error| CliError::Parse {
            path: path.clone(),
            offset: json_offset(&bytes, &e),
            message: e.to_string(),
        };
        let raw: serde_json::Value = serde_json::from_slice(&bytes).map_err(parse_err)?;
        let version = raw.get("version").and_then(serde_json::Value::as_u64).ok_or_else(|| CliError::Parse {
            path: path.clone(),
            offset: 0,
            message: "missing numeric `version` field".into(),
        })?;
        if version != u64::from(MANIFEST_VERSION) {
            return Err(CliError::Version {
                path,
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: MANIFEST_VERSION,
            });
        }
        serde_json::from_slice(&bytes).map_err(parse_err)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&RunManifest::path(run_dir), text.as_bytes())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn completed(&self) -> Vec<&str> {
        self.stages
            .iter()
            .filter(|s| s.status == StageStatus::Completed)
            .map(|s| s.name.as_str())
            .collect()
    }

    /// True when `name` completed and every artifact still has its recorded
    /// digest.
    pub fn verified(&self, run_dir: &Path, name: &str) -> bool {
        match self.stage(name) {
            Some(s) if s.status == StageStatus::Completed => s
                .artifacts
                .iter()
                .all(|a| sha256_file(&run_dir.join(&a.path)).is_ok_and(|d| d == a.sha256)),
            _ => false,
        }
    }

    fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.name == record.name) {
            Some(s) => *s = record,
            None => self.stages.push(record),
        }
    }

    pub fn begin(&mut self, name: &str) {
        self.upsert(StageRecord {
            name: name.to_string(),
            status: StageStatus::Running,
            started_unix_ms: now_ms(),
            finished_unix_ms: None,
            wall_ms: None,
            artifacts: Vec::new(),
            error: None,
        });
    }

    fn finish(&mut self, name: &str, status: StageStatus, artifacts: Vec<Artifact>, error: Option<String>) {
        let now = now_ms();
        if let Some(s) = self.stages.iter_mut().find(|s| s.name == name) {
            s.status = status;
            s.finished_unix_ms = Some(now);
            s.wall_ms = Some(now.saturating_sub(s.started_unix_ms));
            s.artifacts = artifacts;
            s.error = error;
        }
    }

    /// Marks `name` completed, digesting each artifact (paths relative to
    /// `run_dir`).
    pub fn complete(&mut self, run_dir: &Path, name: &str, artifacts: &[String]) -> Result<()> {
        let digests = artifacts
            .iter()
            .map(|p| {
                Ok(Artifact {
                    path: p.clone(),
                    sha256: sha256_file(&run_dir.join(p))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.finish(name, StageStatus::Completed, digests, None);
        Ok(())
    }

    pub fn fail(&mut self, name: &str, error: &CliError) {
        self.finish(name, StageStatus::Failed, Vec::new(), Some(error.to_string()));
    }
}
