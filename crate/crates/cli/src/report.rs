//! JSON and CSV report records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use floss_core::spectral::SpectralTransform;
use floss_core::train::Scheme;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReport {
    pub transform: SpectralTransform,
    pub window: usize,
    pub samples: usize,
    pub seed: u64,
    /// Estimate on the first window of the input.
    pub dominant_bin: Option<usize>,
    pub period: Option<f64>,
    pub power_at_peak: Option<f64>,
    pub low_confidence: Option<bool>,
    /// Rounded period → number of sampled windows, plus a `none` bucket.
    pub histogram: BTreeMap<String, usize>,
    pub mode: Option<u64>,
}

/// Downstream metrics; fields that do not apply to the task are null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub scheme: Scheme,
    pub floss_weight: f64,
    pub seed: u64,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub detected_period: Option<f64>,
}

impl MetricsReport {
    pub fn empty(task: &str, scheme: Scheme, floss_weight: f64, seed: u64) -> Self {
        Self {
            task: task.to_string(),
            scheme,
            floss_weight,
            seed,
            mse: None,
            mae: None,
            accuracy: None,
            macro_f1: None,
            precision: None,
            recall: None,
            f1: None,
            detected_period: None,
        }
    }
}

/// One cell of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: String,
    pub setting: String,
    pub detection_transform: SpectralTransform,
    pub loss_transform: SpectralTransform,
    pub floss_weight: f64,
    pub pooling_scale: usize,
    pub hierarchical: bool,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub f1: Option<f64>,
    pub detected_period: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String, CliError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, &text)?;
    Ok(text)
}

pub fn write_table(path: &Path, rows: &[AblationRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
