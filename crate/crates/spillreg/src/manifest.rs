//! Run provenance. Every command writes `manifest.json` next to its outputs;
//! passing that file back as `--config` reruns with the same resolved
//! configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::files::write_json;

pub const MANIFEST_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub manifest_version: u64,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub master_seed: u64,
    /// Seconds since the Unix epoch. Not part of any data output.
    pub timestamp: u64,
    /// Input files, by role.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    /// Output file names, relative to the manifest's directory.
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Command-specific facts, e.g. the shared seed schedule of an ablation.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            master_seed: config.master_seed(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            notes: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.into(), path.display().to_string());
    }

    pub fn output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.into());
        }
    }

    pub fn note(&mut self, key: &str, value: serde_json::Value) {
        self.notes.insert(key.into(), value);
    }

    pub fn write(&self, dir: &Path) -> AppResult<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(AppError::json(path))?;
        let found = value.get("manifest_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if found != MANIFEST_VERSION {
            return Err(AppError::Version { path: path.into(), kind: "manifest", found, expected: MANIFEST_VERSION });
        }
        serde_json::from_value(value).map_err(AppError::json(path))
    }
}
