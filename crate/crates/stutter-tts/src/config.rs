//! TOML run configurations. Every table rejects unknown keys.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stutter_core::eval::ProbeConfig;
use stutter_core::model::ModelConfig;
use stutter_core::synth::{CorpusConfig, DetectorConfig};
use stutter_core::train::{Ratio, TrainConfig};

use crate::error::{Error, Result};

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    toml::from_str(&text).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text).map_err(Error::io(path))
}

/// Reads `path` when given, else the defaults.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_toml)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub corpus: CorpusConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub stop_threshold: f64,
    pub max_decode_frames: usize,
    pub use_stop: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stop_threshold: 0.5,
            max_decode_frames: 1000,
            use_stop: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub detector: DetectorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ratios: Vec<Ratio>,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub detector: DetectorConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![Ratio::new(100, 0), Ratio::new(95, 5), Ratio::new(90, 10), Ratio::new(85, 15)],
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}
