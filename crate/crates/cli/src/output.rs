//! Files written by every run: one CSV per space-time field, JSON summaries
//! and a `manifest.json` that is written even when the run fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes a `time_index,node_index,value` table with round-trip precision.
pub fn write_series_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["time_index", "node_index", "value"])?;
    for (n, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            w.write_record([n.to_string(), i.to_string(), format!("{v:.16e}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_series_csv`]. Rows must be complete and
/// numbered from zero.
pub fn read_series_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in r.deserialize::<(usize, usize, f64)>().enumerate() {
        let (n, i, v) = rec.with_context(|| format!("{}: bad record {}", path.display(), line + 2))?;
        if n == rows.len() && i == 0 {
            rows.push(Vec::new());
        }
        let count = rows.len();
        match rows.last_mut() {
            Some(row) if n + 1 == count && i == row.len() => row.push(v),
            _ => bail!("{}: record {} is out of order (time {n}, node {i})", path.display(), line + 2),
        }
    }
    if rows.windows(2).any(|w| w[0].len() != w[1].len()) {
        bail!("{}: rows have different lengths", path.display());
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The run finished but its checks did not pass.
    Failed,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub core: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: PathBuf,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub wall_seconds: f64,
    pub status: Status,
    pub error: Option<String>,
    pub failing_step: Option<usize>,
    /// Cost after each accepted optimizer step, starting with `J(u0)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_trace: Option<Vec<f64>>,
    pub files: Vec<String>,
}

/// Collects what goes into the manifest while a command runs.
#[derive(Debug)]
pub struct RunRecord {
    out: PathBuf,
    started: Instant,
    pub manifest: Manifest,
}

impl RunRecord {
    pub fn start(command: &str, config: &Path, out: &Path) -> Self {
        let config_sha256 = fs::read(config).ok().map(|bytes| hex::encode(Sha256::digest(bytes)));
        RunRecord {
            out: out.to_path_buf(),
            started: Instant::now(),
            manifest: Manifest {
                command: command.to_string(),
                config: config.to_path_buf(),
                config_sha256,
                seed: None,
                versions: Versions { cli: env!("CARGO_PKG_VERSION"), core: phasefield_core::VERSION },
                wall_seconds: 0.0,
                status: Status::Ok,
                error: None,
                failing_step: None,
                cost_trace: None,
                files: Vec::new(),
            },
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn series(&mut self, name: &str, rows: &[Vec<f64>]) -> Result<()> {
        write_series_csv(&self.path(name), rows)?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.path(name), value)?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        write_json(&self.out.join("manifest.json"), &self.manifest)?;
        Ok(self.manifest)
    }
}
