//! Run manifests: everything needed to reproduce a run bit for bit.

use relu_lawn::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub threads: usize,
    /// Every resolved flag and derived setting of the run.
    pub parameters: serde_json::Value,
    /// SHA-256 of every input file consumed.
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    parameters: serde_json::Value,
    input_hashes: BTreeMap<String, String>,
    outputs: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, parameters: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            parameters,
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        self.input_hashes
            .insert(path.display().to_string(), hex::encode(digest));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Extra derived values worth recording (residuals, free counts, ...).
    pub fn note(&mut self, key: &str, value: serde_json::Value) {
        if let serde_json::Value::Object(map) = &mut self.parameters {
            map.insert(key.to_string(), value);
        }
    }

    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            parameters: self.parameters,
            input_hashes: self.input_hashes,
            outputs: self.outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(format!("manifest-{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
