use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the model file contents.
pub fn spec_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `<out>.manifest.json`
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, A: Serialize> {
    pub command: &'a str,
    pub args: &'a A,
    pub spec_sha256: &'a str,
    pub seeds: Vec<u64>,
    pub tool_version: &'static str,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

impl<'a, A: Serialize> RunManifest<'a, A> {
    pub fn new(command: &'a str, args: &'a A, spec_sha256: &'a str) -> Self {
        Self {
            command,
            args,
            spec_sha256,
            seeds: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION"),
            wall_time_seconds: 0.0,
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    /// Writes the manifest next to `out` and returns its path.
    pub fn write_for(mut self, out: &Path, started: Instant) -> anyhow::Result<PathBuf> {
        self.wall_time_seconds = started.elapsed().as_secs_f64();
        self.outputs.push(out.display().to_string());
        let path = manifest_path(out);
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
