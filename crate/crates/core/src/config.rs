use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::hash::config_sha256;
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::tiling::TileConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory for training and evaluation.
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints, logs and reports.
    pub out: Option<PathBuf>,
    /// Checkpoint to resume from or run inference with.
    pub checkpoint: Option<PathBuf>,
}

/// Everything a command needs; every key has a default and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub tiling: TileConfig,
    pub paths: Paths,
    /// Seeds parameter initialisation.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::full(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            tiling: TileConfig::default(),
            paths: Paths::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Json {
            path: path.into(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.validate()?;
        self.train.validate()
    }

    /// Hash of everything except `paths`, which locate inputs and outputs
    /// but do not change results.
    pub fn sha256(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        config_sha256(&c)
    }

    /// The config as stored next to outputs, with its hash.
    pub fn stamped_json(&self) -> String {
        let value = serde_json::json!({
            "config": self,
            "config_sha256": self.sha256(),
        });
        serde_json::to_string_pretty(&value).expect("config serializes")
    }
}
