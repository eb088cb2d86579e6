use std::path::{Path, PathBuf};
use std::time::Instant;

use rfsf_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "run_manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// A configuration that shaped the run. `path` is absent when built-in
/// defaults were used; the hash always covers the effective JSON.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigRecord {
    pub role: String,
    pub path: Option<String>,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub configs: Vec<ConfigRecord>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_time_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            configs: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn config(&mut self, role: &str, path: Option<&Path>, effective_json: &str) {
        self.configs.push(ConfigRecord {
            role: role.to_string(),
            path: path.map(|p| p.display().to_string()),
            sha256: sha256_hex(effective_json.as_bytes()),
        });
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn outputs<I: IntoIterator<Item = PathBuf>>(&mut self, paths: I) -> Result<()> {
        paths.into_iter().try_for_each(|p| self.output(&p))
    }

    /// Stamps the wall time and writes `run_manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        if let Some(t) = self.started {
            self.wall_time_seconds = t.elapsed().as_secs_f64();
        }
        let path = dir.join(FILE_NAME);
        let body = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}
