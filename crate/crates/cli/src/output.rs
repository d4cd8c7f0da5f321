//! Run directories: exclusive lock, artifact files, manifest and report.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::config_hash;

pub const LOCK_NAME: &str = ".ntklab.lock";

/// Output directory held exclusively for the lifetime of the value.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
    written: BTreeMap<String, String>,
}

impl RunDir {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK_NAME);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!("{} is in use by another run (lock file {})", root.display(), lock.display())
            }
            Err(e) => return Err(e).with_context(|| format!("creating lock {}", lock.display())),
        };
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { root: root.to_path_buf(), lock, written: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `name` under the run directory and records its SHA-256.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        f.write_all(contents)?;
        self.written.insert(name.to_string(), hex::encode(Sha256::digest(contents)));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn artifact_names(&self) -> Vec<String> {
        self.written.keys().cloned().collect()
    }

    /// `manifest.json`: resolved config, its hash and the hashes of all
    /// artifacts written so far.
    pub fn write_manifest(&mut self, subcommand: &str, config: &Value) -> Result<PathBuf> {
        let manifest = Manifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            config_hash: config_hash(config),
            artifacts: self.written.clone(),
        };
        self.write_json("manifest.json", &manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub config: Value,
    pub config_hash: String,
    /// File name to SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub subcommand: String,
    pub metrics: BTreeMap<String, f64>,
    /// `None` when the run has no acceptance verdict.
    pub pass: Option<bool>,
    pub artifacts: Vec<String>,
    /// Structured per-command details.
    pub details: Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunDir::acquire(dir.path()).unwrap();
        assert!(RunDir::acquire(dir.path()).is_err());
        drop(a);
        assert!(RunDir::acquire(dir.path()).is_ok());
    }

    #[test]
    fn manifest_lists_artifact_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::acquire(dir.path()).unwrap();
        run.write("a.csv", b"x\n1\n").unwrap();
        run.write_manifest("demo", &serde_json::json!({"k": 1})).unwrap();
        let m: Manifest = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.artifacts.len(), 1);
        assert_eq!(m.artifacts["a.csv"], hex::encode(Sha256::digest(b"x\n1\n")));
        assert_eq!(m.config_hash, config_hash(&serde_json::json!({"k": 1})));
    }
}
