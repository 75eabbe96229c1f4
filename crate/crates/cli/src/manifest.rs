use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dwrl_core::RunConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to every artifact set; together with the input files it is
/// enough to reproduce the artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub revision: String,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct ManifestBuilder {
    command: String,
    config: RunConfig,
    seed: u64,
    started: Instant,
    inputs: Vec<Artifact>,
    artifacts: Vec<Artifact>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            seed,
            started: Instant::now(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    /// Writes `contents` to `path` and records it.
    pub fn write(&mut self, path: &Path, contents: &str) -> Result<(), CliError> {
        fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
        self.record(path)
    }

    pub fn record(&mut self, path: &Path) -> Result<(), CliError> {
        self.artifacts.push(Artifact {
            path: path.to_path_buf(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    pub fn finish(self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            revision: env!("DWRL_REVISION").to_string(),
            command: self.command,
            config_digest: self.config.digest(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            artifacts: self.artifacts,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
