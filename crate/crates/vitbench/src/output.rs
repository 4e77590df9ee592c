//! Staged output files and the run manifest.
//!
//! Every file is rendered in memory first; nothing is written until the
//! whole command has succeeded, and the directory is probed for writability
//! before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::error::{Error, IoContext, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub size: u64,
    /// Command that last wrote the file.
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    /// Named seeds of every run, e.g. `"replicate/B32_E15/rep3/fold1"`.
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<String>,
}

/// `run_manifest.json`: every command run against the directory and the
/// current inventory, each file listed once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub commands: Vec<CommandRecord>,
    pub files: BTreeMap<String, FileEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(RUN_MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).at(&path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map(Some).map_err(|e| Error::Schema {
            path: path.clone(),
            field: e.path().to_string(),
            message: e.into_inner().to_string(),
        })
    }

    /// Files under `dir` that the inventory does not list.
    pub fn orphans(&self, dir: &Path) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in WalkDir::new(dir).sort_by_file_name() {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(dir).to_path_buf();
                Error::io(path, e.into())
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = relative(dir, entry.path());
            if rel != RUN_MANIFEST && !self.files.contains_key(&rel) {
                out.push(rel);
            }
        }
        Ok(out)
    }
}

fn relative(dir: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(dir).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Files produced by one command, keyed by path relative to the output root.
pub struct Outputs {
    root: PathBuf,
    staged: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    /// Create `root` if needed and check that files can be written there.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).at(root)?;
        let probe = root.join(".vitbench-write-probe");
        fs::write(&probe, b"").at(&probe)?;
        fs::remove_file(&probe).at(&probe)?;
        Ok(Outputs { root: root.to_path_buf(), staged: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn add(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        let rel = rel.into();
        assert!(rel != RUN_MANIFEST, "{RUN_MANIFEST} is written by commit");
        self.staged.insert(rel, bytes);
    }

    /// Pretty JSON with a trailing newline.
    pub fn add_json<T: Serialize>(&mut self, rel: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(rel, bytes);
        Ok(())
    }

    pub fn staged(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.staged.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Write every staged file, then merge them into `run_manifest.json`.
    /// Returns the manifest and any orphan files found by the audit.
    pub fn commit(self, mut record: CommandRecord) -> Result<(RunManifest, Vec<String>)> {
        let mut manifest = RunManifest::load(&self.root)?.unwrap_or_default();
        for (rel, bytes) in &self.staged {
            let path = self.root.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).at(parent)?;
            }
            fs::write(&path, bytes).at(&path)?;
            let entry = FileEntry { sha256: sha256_hex(bytes), size: bytes.len() as u64, command: record.command.clone() };
            manifest.files.insert(rel.clone(), entry);
        }
        // forget files from earlier runs that have since been deleted
        manifest.files.retain(|rel, _| self.root.join(rel).is_file());
        record.files = self.staged.keys().cloned().collect();
        record.finished_unix = unix_now();
        manifest.commands.push(record);
        let path = self.root.join(RUN_MANIFEST);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).at(&path)?;
        let orphans = manifest.orphans(&self.root)?;
        Ok((manifest, orphans))
    }
}
