//! Run manifests: every command writes its artifacts atomically and then a
//! manifest recording the effective configuration, the seed, and a sha256
//! digest per artifact. The manifest is written last, so its presence marks
//! a complete run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use shelab_core::error::{Error, Result};

#[derive(Serialize)]
pub struct ArtifactDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub base_seed: u64,
    pub workers: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifacts: Vec<ArtifactDigest>,
    /// Statistical verdict where the command has one (exit code 2 when
    /// false); absent for plain artifact-producing commands.
    pub verdict: Option<bool>,
}

pub struct RunWriter {
    out_dir: PathBuf,
    command: String,
    started_unix_ms: u128,
    artifacts: Vec<ArtifactDigest>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunWriter {
    pub fn create(out_dir: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            started_unix_ms: now_ms(),
            artifacts: Vec::new(),
        })
    }

    /// Atomic write: the bytes land under a temporary name and are renamed
    /// into place; the digest is recorded for the manifest.
    pub fn write_artifact(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let final_path = self.out_dir.join(name);
        let tmp_path = self.out_dir.join(format!("{name}.tmp"));
        fs::write(&tmp_path, bytes)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", tmp_path.display())))?;
        fs::rename(&tmp_path, &final_path)
            .map_err(|e| Error::Config(format!("cannot rename into {}: {e}", final_path.display())))?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.artifacts.push(ArtifactDigest {
            name: name.to_string(),
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| Error::Config(format!("serialisation failed: {e}")))?;
        bytes.push(b'\n');
        self.write_artifact(name, &bytes)
    }

    /// Writes the manifest (always `manifest.json`), completing the run.
    pub fn finish(
        self,
        config: &BTreeMap<String, String>,
        base_seed: u64,
        workers: &str,
        verdict: Option<bool>,
    ) -> Result<()> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            config: config.clone(),
            base_seed,
            workers: workers.to_string(),
            started_unix_ms: self.started_unix_ms,
            finished_unix_ms: now_ms(),
            artifacts: self.artifacts,
            verdict,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::Config(format!("manifest serialisation failed: {e}")))?;
        bytes.push(b'\n');
        let tmp = self.out_dir.join("manifest.json.tmp");
        let final_path = self.out_dir.join("manifest.json");
        fs::write(&tmp, &bytes)
            .map_err(|e| Error::Config(format!("cannot write manifest: {e}")))?;
        fs::rename(&tmp, &final_path)
            .map_err(|e| Error::Config(format!("cannot rename manifest: {e}")))?;
        Ok(())
    }
}
