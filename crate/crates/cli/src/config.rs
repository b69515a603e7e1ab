use std::path::Path;

use kmotion_core::nn::{NetworkConfig, TrainConfig};
use kmotion_core::pipeline::PipelineConfig;
use kmotion_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Every tunable of a run; missing fields take built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub pipeline: PipelineConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("bad config {}: {e}", path.display())))
    }

    /// Flag value, else file value, else 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        let s = flag.or(self.seed).unwrap_or(0);
        self.seed = Some(s);
        s
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub arguments: &'a [String],
    pub seed: u64,
    pub config: &'a RunConfig,
    pub outputs: Vec<String>,
}
