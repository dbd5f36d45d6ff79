use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::errors::AppError;

/// Provenance record written atomically at the end of every successful
/// command.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_ms: u64,
}

pub struct ManifestBuilder {
    command: &'static str,
    started: Instant,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str) -> Self {
        ManifestBuilder {
            command,
            started: Instant::now(),
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Write `run_manifest.json` into `dir` via a temp file and rename.
    pub fn write(self, dir: &Path) -> Result<(), AppError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config: self.config,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_ms: self.started.elapsed().as_millis() as u64,
        };
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        let path = dir.join("run_manifest.json");
        let tmp = dir.join("run_manifest.json.tmp");
        let data = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| AppError::Data(format!("manifest: {e}")))?;
        std::fs::write(&tmp, data).map_err(|e| AppError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| AppError::io(&path, e))?;
        Ok(())
    }
}
