use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::experiment::{run_ablation, run_scale_sweep, ExperimentConfig};
use super::metrics::MetricsReport;
use super::HarnessError;

pub const TOOL: &str = "kgfuse";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Describes one invocation. For experiments `config` alone determines
/// every metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub timestamp_unix: u64,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: Option<ExperimentConfig>,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seeds: Vec<u64>, config: Option<ExperimentConfig>, args: BTreeMap<String, String>) -> Self {
        let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp_unix,
            command: command.into(),
            seeds,
            config,
            args,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Re-executes the experiment a manifest describes.
pub fn rerun(manifest: &RunManifest) -> Result<Vec<MetricsReport>, HarnessError> {
    let cfg = manifest
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config(format!("manifest for `{}` holds no experiment config", manifest.command)))?;
    match manifest.command.as_str() {
        "ablate" => run_ablation(cfg),
        "scale-sweep" => run_scale_sweep(cfg),
        other => Err(HarnessError::Config(format!("command `{other}` cannot be re-run from a manifest"))),
    }
}
