//! The JSON record written beside every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Every flag after the config file was applied.
    pub config: Value,
    pub seed: Option<u64>,
    pub seed_generated: bool,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    /// Command-specific results (losses, eigenvalues, ...).
    pub summary: Value,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    started: Instant,
    started_unix: u64,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Map<String, Value>,
}

impl Recorder {
    pub fn new() -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Recorder { started: Instant::now(), started_unix, inputs: Vec::new(), outputs: Vec::new(), summary: Default::default() }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputHash { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn finish(self, command: &str, config: Value, seed: Option<u64>, seed_generated: bool, threads: usize) -> RunManifest {
        let versions = [("sns-cli", env!("CARGO_PKG_VERSION")), ("sns-core", sns_core::VERSION)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            seed_generated,
            threads,
            versions,
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            summary: Value::Object(self.summary),
        }
    }
}

/// `dir/manifest.json` for a directory output, `file.ext.manifest.json`
/// beside a file output.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
