//! Stage manifests: JSON records of what a stage read and wrote, with
//! SHA-256 content hashes. Paths are relative to the run directory and no
//! timestamps are stored, so identical runs produce identical manifests.

use std::path::{Path, PathBuf};

use bitraj_core::eval::StageFailure;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

pub const MANIFEST_SCHEMA: &str = "manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Link to the manifest of a stage this one consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upstream {
    pub stage: String,
    pub manifest: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    pub master_seed: u64,
    /// Seed derived from the master seed for this stage's label.
    pub stage_seed: u64,
    pub config_hash: String,
    pub upstream: Vec<Upstream>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<StageFailure>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn output(&self, rel: &str) -> Option<&FileHash> {
        self.outputs.iter().find(|f| f.path == rel)
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Hash of the canonical JSON encoding of `value`.
pub fn sha256_json(value: &serde_json::Value) -> String {
    sha256_bytes(&serde_json::to_vec(value).expect("json value serializes"))
}

/// `path` relative to `root`, with `/` separators.
pub fn relative(root: &Path, path: &Path) -> String {
    let rel: PathBuf = path.strip_prefix(root).unwrap_or(path).to_path_buf();
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn hash_files(root: &Path, paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    let mut out: Vec<FileHash> = paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: relative(root, p),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    out.dedup();
    Ok(out)
}
