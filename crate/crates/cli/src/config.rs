//! Run configuration: a JSON file whose sections mirror the core settings.
//! Every field is optional; omitted fields take their defaults.

use std::path::Path;

use anyhow::Context;
use rankbench_core::generate::GenerationConfig;
use rankbench_core::metrics::saturation::IntervalMethod;
use rankbench_core::verifier::{RewardSettings, TestGenSettings};
use rankbench_core::{ClientConfig, ExecConfig, MaeMode, SelectionParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaturationSettings {
    pub k_max: Option<usize>,
    pub reps: usize,
    pub interval: IntervalMethod,
}

impl Default for SaturationSettings {
    fn default() -> Self {
        SaturationSettings { k_max: None, reps: 1000, interval: IntervalMethod::Percentile }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub exec: ExecConfig,
    pub generation: GenerationConfig,
    pub selection: SelectionParams,
    pub testgen: TestGenSettings,
    pub reward: RewardSettings,
    pub client: ClientConfig,
    pub saturation: SaturationSettings,
    pub mae_mode: MaeMode,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Hex SHA-256 of the serialized effective configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
