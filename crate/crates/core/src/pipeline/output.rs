//! Run directory bookkeeping: every file goes through [`OutputDir`], which
//! records its SHA-256 for the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::Stage;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "MANIFEST.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

/// Settings the run used that the config may have left implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Materialized {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_reg: f64,
    pub checkpoint_every: Option<usize>,
    pub damping: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub dm_num_subsets: Option<usize>,
    pub dm_subset_fraction: f64,
    pub dm_ridge: Option<f64>,
    pub similarity: String,
    pub explanandum_label: String,
    pub rule_test_source: Option<String>,
}

impl Materialized {
    pub(crate) fn from_config(cfg: &RunConfig) -> Self {
        Self {
            learning_rate: cfg.model.learning_rate,
            epochs: cfg.model.epochs,
            batch_size: cfg.model.batch_size,
            l2_reg: cfg.model.l2_reg,
            checkpoint_every: cfg.model.checkpoint_every,
            damping: cfg.explainers.damping,
            cg_tol: cfg.explainers.cg_tol,
            cg_max_iter: cfg.explainers.cg_max_iter,
            dm_num_subsets: cfg.explainers.dm_num_subsets,
            dm_subset_fraction: cfg.explainers.dm_subset_fraction,
            dm_ridge: cfg.explainers.dm_ridge,
            similarity: crate::metrics::SIMILARITY_NAME.to_string(),
            explanandum_label: "model prediction".to_string(),
            rule_test_source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Seconds since the Unix epoch; the only time-dependent value a run
    /// writes.
    pub created_unix: u64,
    pub defaults: Materialized,
    pub config: RunConfig,
    pub files: BTreeMap<String, FileEntry>,
}

impl Manifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
    }
    s
}

pub(crate) fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub(crate) struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (forward-slash separated) under the root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let bytes = to_json_bytes(value)?;
        self.write(rel, &bytes)
    }

    pub fn write_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(self.root.join(rel), e))?;
        self.write(rel, &buf)
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<()> {
        manifest.files = self.files;
        let bytes = to_json_bytes(&manifest)?;
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }
}
