//! Provenance sidecars and content digests.
//!
//! Sidecars hold no paths or timestamps, so two runs with the same inputs
//! and settings write identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use ndp_core::{Report, Result};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const DIR_SIDECAR: &str = "provenance.txt";
pub const FILE_SIDECAR_EXT: &str = "provenance";

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Digest over every file under `dir` (relative path and contents, sorted),
/// skipping the directory's own sidecar.
pub fn dir_digest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        if rel == Path::new(DIR_SIDECAR) {
            continue;
        }
        let name = rel.to_string_lossy().replace('\\', "/");
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        let bytes = fs::read(dir.join(&rel))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walked under root").to_path_buf());
        }
    }
    Ok(())
}

pub fn digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        dir_digest(path)
    } else {
        file_digest(path)
    }
}

/// Record of how an artifact was made.
pub struct Provenance {
    report: Report,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        let mut report = Report::new();
        report.set("command", command);
        Self { report }
    }

    /// Records the full effective config and the stage's seed, if it has one.
    pub fn with_config(command: &str, cfg: &PipelineConfig, seed: Option<u64>) -> Self {
        let mut p = Self::new(command);
        if let Some(seed) = seed {
            p.set("seed", seed);
        }
        p.set("config_sha256", cfg.hash());
        for (k, v) in cfg.entries() {
            p.set(&format!("config.{k}"), v);
        }
        p
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.report.set(key, value);
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.report.set(&format!("input.{name}.sha256"), digest(path)?);
        Ok(())
    }

    pub fn report(&self) -> &Report {
        &self.report
    }

    /// Writes `dir/provenance.txt` for directories, `<file>.provenance` otherwise.
    pub fn write_for(&self, artifact: &Path) -> Result<PathBuf> {
        let path = sidecar_path(artifact);
        self.report.write(&path)?;
        Ok(path)
    }
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join(DIR_SIDECAR)
    } else {
        let mut name = artifact.as_os_str().to_owned();
        name.push(".");
        name.push(FILE_SIDECAR_EXT);
        PathBuf::from(name)
    }
}

/// Reads a field from the sidecar next to `artifact`, if there is one.
pub fn upstream_field(artifact: &Path, key: &str) -> Option<String> {
    let report = Report::read(sidecar_path(artifact)).ok()?;
    report.get(key).map(str::to_string)
}
