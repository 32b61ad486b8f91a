//! Stage-by-stage pipeline driver behind the `bitraj` binary.
//!
//! Each stage reads the artifacts of its upstream stages, checks them
//! against their manifests, writes its own artifacts under
//! `<out>/<stage>[/<mode>]/` and records a [`Manifest`]. A stage whose
//! config section, master seed, upstream manifests and outputs are all
//! unchanged is skipped unless forced.

use std::path::{Path, PathBuf};

mod config;
mod manifest;
mod pipeline;

pub use config::{Issue, RunConfig};
pub use manifest::{hash_files, relative, sha256_bytes, sha256_file, sha256_json, FileHash, Manifest, Upstream, MANIFEST_FILE, MANIFEST_SCHEMA};
pub use pipeline::{Outcome, Pipeline, Stage};

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Issue>),

    #[error("stage `{stage}` needs the output of stage `{upstream}` ({}); run `bitraj {command}` first", .path.display())]
    MissingUpstream {
        stage: String,
        upstream: String,
        command: String,
        path: PathBuf,
    },

    #[error("stage `{stage}`: {path} does not match the manifest of stage `{upstream}`; run `bitraj {command} --force`")]
    StaleUpstream {
        stage: String,
        upstream: String,
        command: String,
        path: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: bitraj_core::Error,
    },

    #[error("stage `{stage}`: {message}")]
    Invalid { stage: String, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// For dependency errors, the upstream stage that has to run first;
    /// otherwise the stage that failed.
    pub fn stage(&self) -> Option<&str> {
        match self {
            CliError::MissingUpstream { upstream, .. } | CliError::StaleUpstream { upstream, .. } => Some(upstream),
            CliError::Stage { stage, .. } | CliError::Invalid { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
