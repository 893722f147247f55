use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Metadata written next to every run's outputs as `run.toml`.
#[derive(Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub status: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "toml::Table::is_empty")]
    pub summary: toml::Table,
    pub artifacts: Vec<Artifact>,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunRecord {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            status: "ok".into(),
            started_unix: now_unix(),
            finished_unix: 0.0,
            wall_seconds: 0.0,
            notes: Vec::new(),
            summary: toml::Table::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = fs::read(path)?;
        self.artifacts.push(Artifact {
            file: path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
            sha256: hex(&Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> std::io::Result<PathBuf> {
        self.finished_unix = now_unix();
        self.wall_seconds = self.finished_unix - self.started_unix;
        let path = dir.join("run.toml");
        let text = toml::to_string(&self).map_err(std::io::Error::other)?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
