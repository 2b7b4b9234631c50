//! Config-file support. A config file is a JSON object whose top level holds
//! the global settings and one optional section per subcommand; flags always
//! win over the file, the file wins over built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

/// Fully resolved global settings.
pub struct Global {
    pub seed: u64,
    pub quiet: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub quiet: Option<bool>,
    pub synth_masks: SynthMasksSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub gen_synth: GenSynthSection,
    pub loss_check: LossCheckSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthMasksSection {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub diameter: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainSection {
    pub rounds: Option<u64>,
    pub lr: Option<f64>,
    pub max_depth: Option<u64>,
    pub max_leaves: Option<u64>,
    pub min_leaf: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvaluateSection {
    pub n_boot: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenSynthSection {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub diameter: Option<u32>,
    pub normal_range: Option<(u32, u32)>,
    pub lymphocyte_range: Option<(u32, u32)>,
    pub malignant_range: Option<(u32, u32)>,
    pub min_separation: Option<f64>,
    pub softness_sigma: Option<f64>,
    pub map_noise_sigma: Option<f64>,
    pub label_noise_sigma: Option<f64>,
    pub cellularity_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct LossCheckSection {
    pub size: Option<u32>,
    pub trials: Option<u64>,
    pub alpha: Option<f64>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
