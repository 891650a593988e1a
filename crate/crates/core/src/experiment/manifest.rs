use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub trace_fingerprint: Option<String>,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("manifest is not valid: {0}")]
    Parse(#[from] serde_json::Error),
}

/// A file whose content no longer matches the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Discrepancy {
    Missing(String),
    Changed(String),
}

/// Writes files under an output directory and remembers their hashes.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    /// Records a file some other writer already put under the root.
    pub fn record(&mut self, rel: &str) -> std::io::Result<()> {
        let bytes = std::fs::read(self.root.join(rel))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestEntry { path: rel.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn files(&self) -> &[ManifestEntry] {
        &self.files
    }

    pub fn into_files(mut self) -> Vec<ManifestEntry> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ManifestError> {
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&p).map_err(|e| ManifestError::Io(p, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Re-hashes every listed file. An empty result means the directory matches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<Discrepancy>, ManifestError> {
    let m = read_manifest(dir)?;
    let mut out = Vec::new();
    for f in &m.files {
        match std::fs::read(dir.join(&f.path)) {
            Ok(bytes) if sha256_hex(&bytes) == f.sha256 => {}
            Ok(_) => out.push(Discrepancy::Changed(f.path.clone())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => out.push(Discrepancy::Missing(f.path.clone())),
            Err(e) => return Err(ManifestError::Io(dir.join(&f.path), e)),
        }
    }
    Ok(out)
}
