//! Append-only run manifest: one JSON line per run with the resolved
//! configuration, seed, input checksums and produced artifacts.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

/// One manifest entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Which subcommand produced this entry.
    pub command: String,
    /// RFC 3339 timestamp of when the run started.
    pub started_at: String,
    /// RFC 3339 timestamp of when the entry was written.
    pub finished_at: String,
    pub seed: Option<u64>,
    /// Resolved configuration, when the command takes one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    /// SHA-256 checksums of the input files, keyed by path.
    pub inputs: Vec<(String, String)>,
    /// Paths written by the run.
    pub outputs: Vec<String>,
}

/// SHA-256 of a file's contents, as lowercase hex.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {} for checksumming", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            seed: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .push((path.display().to_string(), file_sha256(path)?));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Append this entry to `manifest.jsonl` in `dir`, stamping the finish
    /// time. Creates the directory and file as needed.
    pub fn append(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_at = chrono::Utc::now().to_rfc3339();
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("manifest.jsonl");
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        writeln!(file, "{}", serde_json::to_string(&self)?)?;
        Ok(path)
    }
}

/// Read every entry of a manifest file.
pub fn read_manifest(path: &Path) -> Result<Vec<RunManifest>> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("malformed manifest line"))
        .collect()
}
