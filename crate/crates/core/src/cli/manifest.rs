use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// What produced an output directory.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    /// Dataset directory the run read, if any.
    pub data_dir: Option<String>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    pub threads: usize,
    pub wall_clock_secs: f64,
    /// Peak resident set size in KiB, where the platform reports it.
    pub peak_rss_kib: Option<u64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Peak RSS from /proc; `None` elsewhere.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    started: Instant,
    pub manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, args: &[String], threads: usize) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.into(),
                args: args.to_vec(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                seed: None,
                data_dir: None,
                artifacts: Vec::new(),
                threads,
                wall_clock_secs: 0.0,
                peak_rss_kib: None,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn config<T: Serialize>(&mut self, value: &T) -> Result<()> {
        self.manifest.config = serde_json::to_value(value)?;
        Ok(())
    }

    pub fn artifact(&mut self, out: &Path, file: &Path) {
        let rel = file.strip_prefix(out).unwrap_or(file);
        self.manifest.artifacts.push(rel.display().to_string());
    }

    pub fn finish(mut self, out: &Path) -> Result<PathBuf> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        self.manifest.peak_rss_kib = peak_rss_kib();
        self.manifest.artifacts.sort();
        let p = out.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        std::fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}
