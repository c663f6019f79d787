use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ingest::Scaler;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record written next to every output; `emlreg replay` reruns it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub master_seed: u64,
    /// Fully resolved configuration, defaults included.
    pub config: RunConfig,
    /// Checkpoint read by `evaluate`.
    pub checkpoint: Option<PathBuf>,
    /// Loss the real-data base model was trained with.
    pub base_loss: Option<String>,
    /// Standardisation constants of ingested data.
    pub standardization: Option<Scaler>,
    pub outputs: Vec<String>,
    pub jobs: usize,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, jobs: usize) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.scenario.master_seed,
            config: config.clone(),
            checkpoint: None,
            base_loss: None,
            standardization: None,
            outputs: Vec::new(),
            jobs,
            started_unix_ms: now_unix_ms(),
            finished_unix_ms: 0,
        }
    }

    /// Stamp the finish time and write `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix_ms = now_unix_ms();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text).map_err(CliError::file(&path))?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::file(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}
