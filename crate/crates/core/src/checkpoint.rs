//! Versioned JSON checkpoints of a trained model and the settings that
//! produced it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floss::FlossConfig;
use crate::timeseries::FeatureStats;
use crate::train::{Model, TrainingConfig};

pub const FORMAT: &str = "floss-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: Model,
    pub training: TrainingConfig,
    pub floss: FlossConfig,
    /// Statistics the training data was normalised with, reused at evaluation.
    pub normalization: Option<FeatureStats>,
}

impl Checkpoint {
    pub fn new(
        model: Model,
        training: TrainingConfig,
        floss: FlossConfig,
        normalization: Option<FeatureStats>,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            seed: training.seed,
            model,
            training,
            floss,
            normalization,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match (value.get("format").and_then(|v| v.as_str()), value.get("version").and_then(|v| v.as_u64())) {
            (Some(FORMAT), Some(v)) if v == u64::from(VERSION) => {}
            (Some(FORMAT), v) => {
                return Err(Error::Checkpoint(format!("unsupported version {v:?}, expected {VERSION}")));
            }
            _ => return Err(Error::Checkpoint(format!("{} is not a {FORMAT} file", path.display()))),
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.model.encoder.validate()?;
        Ok(ckpt)
    }
}
