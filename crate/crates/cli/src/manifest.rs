use std::path::Path;

use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Everything needed to rerun a command. Output paths are relative to the
/// output directory and nothing host- or time-dependent is recorded, so
/// reruns write identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub config_path: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub parameters: Config,
    /// Per-output summaries (iteration counts, final objective, ...).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub results: Vec<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, parameters: &Config) -> Self {
        Self {
            tool: "ldct",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            method: None,
            config_path: config_path.map(|p| p.display().to_string()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: parameters.dose.seed,
            parameters: parameters.clone(),
            results: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }
}
