use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    /// Fully resolved settings, after flags, config file and defaults.
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: &'static str,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
}

pub struct Run {
    dir: PathBuf,
    command: &'static str,
    started: Instant,
    started_unix: u64,
    inputs: BTreeMap<String, String>,
}

impl Run {
    /// Claims `dir` for a new run. A directory holding a manifest is only
    /// reused with `force`.
    pub fn start(command: &'static str, dir: &Path, force: bool) -> Result<Self> {
        if dir.join(MANIFEST_FILE).exists() && !force {
            bail!(
                "{} already contains a run manifest; pass --force to overwrite",
                dir.display()
            );
        }
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            started: Instant::now(),
            started_unix,
            inputs: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn finish(self, config: impl Serialize, seed: u64) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: serde_json::to_value(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            started_unix_seconds: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            inputs: self.inputs,
        };
        let file = fs::File::create(self.dir.join(MANIFEST_FILE))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
        Ok(())
    }
}
