use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Provenance record written next to a run's primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: String,
    pub counts: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

pub struct ManifestBuilder {
    command: String,
    config_hash: String,
    seed: u64,
    started: DateTime<Utc>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, usize>,
    details: Option<serde_json::Value>,
}

impl ManifestBuilder {
    pub fn start(command: &str, config_hash: &str, seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            started: Utc::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            details: None,
        }
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    pub fn count(&mut self, key: &str, n: usize) -> &mut Self {
        self.counts.insert(key.to_string(), n);
        self
    }

    pub fn details(&mut self, v: impl Serialize) -> &mut Self {
        self.details = Some(serde_json::to_value(v).expect("details serialize"));
        self
    }

    /// Write `<primary>.manifest.json` and return its path.
    pub fn finish(&self, primary: &Path) -> CliResult<PathBuf> {
        let stamp = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let manifest = RunManifest {
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
            counts: self.counts.clone(),
            details: self.details.clone(),
        };
        let path = sidecar(primary, "manifest.json");
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

/// `out.jsonl` + `report.json` → `out.jsonl.report.json`.
pub fn sidecar(primary: &Path, suffix: &str) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}
