//! Run manifests: one JSON record per invocation, success or failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub data_path: Option<String>,
    pub seed: Option<u64>,
    pub flags: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub warnings: Vec<String>,
    pub timing_ms: u128,
    pub success: bool,
    /// Outermost error first.
    pub error_chain: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_path: None,
            data_path: None,
            seed: None,
            flags: BTreeMap::new(),
            output_paths: Vec::new(),
            warnings: Vec::new(),
            timing_ms: 0,
            success: false,
            error_chain: Vec::new(),
        }
    }

    pub fn flag(&mut self, key: &str, value: impl ToString) {
        self.flags.insert(key.to_string(), value.to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.output_paths.push(path.display().to_string());
    }

    pub fn record_error(&mut self, err: &anyhow::Error) {
        self.error_chain = err.chain().map(|e| e.to_string()).collect();
    }

    /// Best effort by design: a failing manifest write must not mask the
    /// run's own result.
    pub fn write(&self, out_dir: &Path) -> Option<PathBuf> {
        let path = out_dir.join(format!("{}_manifest.json", self.command));
        let body = serde_json::to_string_pretty(self).ok()?;
        std::fs::create_dir_all(out_dir).ok()?;
        std::fs::write(&path, body + "\n").ok()?;
        Some(path)
    }
}
