//! Experiment configuration read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use floss_core::downstream::Dissimilarity;
use floss_core::encoder::EncoderConfig;
use floss_core::floss::FlossConfig;
use floss_core::timeseries::{SplitSpec, SynthSpec};
use floss_core::train::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub floss: FlossConfig,
    pub training: TrainingConfig,
    pub task: TaskConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV with one column per feature.
    pub input: Option<PathBuf>,
    /// Whether the first CSV column is a timestamp to drop.
    pub has_timestamp: bool,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Z-score every feature with training-split statistics.
    pub normalize: bool,
    /// One 0/1 value per timestep marking anomalies.
    pub labels: Option<PathBuf>,
    /// `file,label` manifests of classification instances.
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Generated stream used when `input` is absent.
    pub synthetic: Option<SynthSpec>,
    /// Generated classification instances used when no manifest is given.
    pub classes: Option<ClassFixture>,
    /// Spikes injected into the stream, which also provide anomaly labels.
    pub spikes: Option<SpikeSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            has_timestamp: true,
            train_fraction: 0.7,
            val_fraction: 0.1,
            test_fraction: 0.2,
            normalize: true,
            labels: None,
            train_manifest: None,
            test_manifest: None,
            synthetic: None,
            classes: None,
            spikes: None,
        }
    }
}

impl DataConfig {
    pub fn split(&self) -> Result<SplitSpec, CliError> {
        Ok(SplitSpec::new(self.train_fraction, self.val_fraction, self.test_fraction)?)
    }
}

/// Sinusoid instances, one class per period, with random phase and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassFixture {
    pub periods: Vec<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub length: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ClassFixture {
    fn default() -> Self {
        Self {
            periods: vec![6.0, 24.0],
            train_per_class: 20,
            test_per_class: 20,
            length: 96,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeSpec {
    /// Fraction of timesteps that receive a spike.
    pub ratio: f64,
    /// Spike height in standard deviations of the clean stream.
    pub magnitude: f64,
    pub seed: u64,
}

impl Default for SpikeSpec {
    fn default() -> Self {
        Self {
            ratio: 0.01,
            magnitude: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Forecast,
    Classify,
    Anomaly,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Forecast => "forecast",
            TaskKind::Classify => "classify",
            TaskKind::Anomaly => "anomaly",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forecast" => Ok(TaskKind::Forecast),
            "classify" => Ok(TaskKind::Classify),
            "anomaly" => Ok(TaskKind::Anomaly),
            other => Err(format!("unknown task {other:?} (forecast, classify, anomaly)")),
        }
    }
}

/// Which head produces forecasts at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastHeadChoice {
    /// The trained head when the checkpoint has one for this horizon, ridge otherwise.
    Auto,
    /// Ridge regression fitted on frozen training-split representations.
    #[default]
    Ridge,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub forecast_head: ForecastHeadChoice,
    pub ridge_alphas: Vec<f64>,
    pub kernel_lambdas: Vec<f64>,
    /// Window length ending at each scored timestep.
    pub anomaly_context: usize,
    /// Flagged fraction; defaults to the labelled fraction of the scored range.
    pub anomaly_ratio: Option<f64>,
    pub dissimilarity: Dissimilarity,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Forecast,
            forecast_head: ForecastHeadChoice::Ridge,
            ridge_alphas: floss_core::downstream::RIDGE_ALPHAS.to_vec(),
            kernel_lambdas: floss_core::downstream::KERNEL_LAMBDAS.to_vec(),
            anomaly_context: 96,
            anomaly_ratio: None,
            dissimilarity: Dissimilarity::L1,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML text; parsing it back yields the same text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder.validate()?;
        self.floss.validate()?;
        self.training.validate()?;
        self.data.split()?;
        if self.task.ridge_alphas.is_empty() || self.task.ridge_alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(CliError::Config("task.ridge_alphas must be nonempty and positive".into()));
        }
        if self.task.kernel_lambdas.is_empty() || self.task.kernel_lambdas.iter().any(|a| !(*a > 0.0)) {
            return Err(CliError::Config("task.kernel_lambdas must be nonempty and positive".into()));
        }
        if self.task.anomaly_context == 0 {
            return Err(CliError::Config("task.anomaly_context must be positive".into()));
        }
        Ok(())
    }

    /// Sets every seed the run depends on.
    pub fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        self.encoder.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[data]\nbogus = 1\n", "[training]\nlr = 0.1\n", "[nope]\n", "[data.spikes]\nheight = 3\n"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn echo_is_byte_stable() {
        let text = r#"
[data]
train_fraction = 0.6
val_fraction = 0.2
test_fraction = 0.2

[data.synthetic]
periods = [6.0, 24.0]
amplitudes = [1.0, 0.5]
phases = [0.0, 1.0]
length = 500

[training]
scheme = "joint"
floss_weight = 0.5

[floss]
transform = "dft"
pooling_scale = 3

[task]
kind = "anomaly"
anomaly_ratio = 0.02
dissimilarity = "cosine"
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let echo = cfg.to_toml();
        let again = ExperimentConfig::parse(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), echo);
        assert_eq!(ExperimentConfig::default().to_toml(), ExperimentConfig::parse(&ExperimentConfig::default().to_toml()).unwrap().to_toml());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(ExperimentConfig::parse("[floss]\npooling_scale = 1\n").is_err());
        assert!(ExperimentConfig::parse("[training]\nfloss_weight = 0.0\ncompanion_weight = 0.0\n").is_err());
        assert!(ExperimentConfig::parse("[task]\nridge_alphas = []\n").is_err());
    }
}
