//! Run manifests: what a command read, wrote and was configured with.
//!
//! The run id hashes the command, configuration and input digests, so the
//! same inputs give the same id. Wall-clock time is recorded only here and
//! never in report files.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub study_id: Option<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch when the manifest was written.
    pub created_unix: u64,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_files(paths: &[PathBuf]) -> std::io::Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn new(
        command: &str,
        study_id: Option<String>,
        seed: Option<u64>,
        config: serde_json::Value,
        inputs: Vec<FileDigest>,
    ) -> Self {
        let mut id_src = format!("{command}\n{config}\n");
        for d in &inputs {
            id_src.push_str(&d.sha256);
            id_src.push('\n');
        }
        let run_id = sha256_bytes(id_src.as_bytes())[..16].to_string();
        Self {
            run_id,
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            study_id,
            seed,
            config,
            inputs,
            outputs: Vec::new(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_outputs(&mut self, paths: &[PathBuf]) -> std::io::Result<()> {
        self.outputs.extend(digest_files(paths)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n")
    }
}
