//! Content-addressed run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
    /// The exact resolved configuration; re-running it reproduces the outputs.
    pub config: Value,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// SHA-256 of the canonical JSON of `(command, config)`; object keys are sorted.
pub fn config_hash(command: &str, config: &Value) -> String {
    let canonical = serde_json::json!({ "command": command, "config": config });
    let bytes = serde_json::to_vec(&canonical).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub struct Run {
    pub dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn create<C: Serialize>(out_dir: &Path, command: &str, config: &C, seed: Option<u64>) -> Result<Run, CliError> {
        let config = serde_json::to_value(config)?;
        let hash = config_hash(command, &config);
        let dir = out_dir.join(format!("{command}-{}", &hash[..16]));
        fs::create_dir_all(&dir)?;
        Ok(Run {
            dir,
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                config_hash: hash,
                seed,
                started_unix: now(),
                finished_unix: 0,
                outputs: Vec::new(),
                config,
            },
        })
    }

    /// Path of an output file, registered in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.finished_unix = now();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.dir.join(MANIFEST), text + "\n")?;
        Ok(self.dir)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    Ok(serde_json::from_str(&text)?)
}
