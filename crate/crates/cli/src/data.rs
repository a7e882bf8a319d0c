//! Loading, fixture generation and normalisation of experiment data.

use std::fs;
use std::path::Path;

use floss_core::timeseries::{
    chronological_split, load_csv, load_manifest, synthesize, zscore_normalize, FeatureStats, SynthSpec,
    TimeSeriesTensor, Window,
};
use ndarray::Array3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ClassFixture, DataConfig, SpikeSpec};
use crate::CliError;

/// A stream with its chronological splits, already normalised.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: TimeSeriesTensor,
    pub train: Window,
    pub val: Window,
    pub test: Window,
    pub stats: Option<FeatureStats>,
    /// Per-timestep anomaly labels, when known.
    pub labels: Option<Vec<bool>>,
}

fn raw_stream(cfg: &DataConfig) -> Result<TimeSeriesTensor, CliError> {
    match (&cfg.input, &cfg.synthetic) {
        (Some(path), _) => Ok(load_csv(path, cfg.has_timestamp)?),
        (None, Some(spec)) => Ok(synthesize(spec)?),
        (None, None) => Err(CliError::Config(
            "set data.input or a [data.synthetic] section".into(),
        )),
    }
}

/// Reads a one-column 0/1 label file, with or without a header row.
pub fn load_labels(path: &Path) -> Result<Vec<bool>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next_back().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v != 0.0),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(CliError::Config(format!(
                    "{}: line {} is not a 0/1 label",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Adds `magnitude` standard deviations to a `ratio` fraction of timesteps
/// (same steps in every series and feature) and returns their labels.
pub fn inject_spikes(t: &TimeSeriesTensor, spec: &SpikeSpec) -> Result<(TimeSeriesTensor, Vec<bool>), CliError> {
    if !(spec.ratio > 0.0 && spec.ratio < 1.0) {
        return Err(CliError::Config(format!("spike ratio {} outside (0, 1)", spec.ratio)));
    }
    let n_time = t.n_time();
    let count = ((spec.ratio * n_time as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![false; n_time];
    for i in sample(&mut rng, n_time, count) {
        labels[i] = true;
    }
    let mut values = t.values().clone();
    for f in 0..t.n_features() {
        let lane = values.slice(ndarray::s![.., .., f]);
        let sd = lane.std(0.0).max(1e-12);
        for (time, &hit) in labels.iter().enumerate() {
            if hit {
                for n in 0..t.n_series() {
                    values[[n, time, f]] += spec.magnitude * sd;
                }
            }
        }
    }
    Ok((TimeSeriesTensor::new(values)?, labels))
}

pub fn prepare_stream(cfg: &DataConfig) -> Result<Prepared, CliError> {
    let raw = raw_stream(cfg)?;
    let (raw, labels) = match (&cfg.spikes, &cfg.labels) {
        (Some(spec), _) => {
            let (s, l) = inject_spikes(&raw, spec)?;
            (s, Some(l))
        }
        (None, Some(path)) => {
            let l = load_labels(path)?;
            if l.len() != raw.n_time() {
                return Err(CliError::Config(format!(
                    "{} labels for a stream of {} steps",
                    l.len(),
                    raw.n_time()
                )));
            }
            (raw, Some(l))
        }
        (None, None) => (raw, None),
    };
    let [train, val, test] = chronological_split(raw.n_time(), cfg.split()?)?;
    let (series, stats) = if cfg.normalize {
        let (s, st) = zscore_normalize(&raw, train)?;
        (s, Some(st))
    } else {
        (raw, None)
    };
    Ok(Prepared {
        series,
        train,
        val,
        test,
        stats,
        labels,
    })
}

/// Re-applies checkpoint statistics instead of recomputing them.
pub fn prepare_stream_with(cfg: &DataConfig, stats: Option<&FeatureStats>) -> Result<Prepared, CliError> {
    let mut p = prepare_stream(&DataConfig {
        normalize: false,
        ..cfg.clone()
    })?;
    if let Some(st) = stats {
        p.series = st.apply(&p.series)?;
        p.stats = Some(st.clone());
    }
    Ok(p)
}

/// Labelled instances for classification.
#[derive(Debug, Clone)]
pub struct Instances {
    pub series: Vec<TimeSeriesTensor>,
    pub labels: Vec<String>,
}

impl Instances {
    /// All instances as rows of one tensor; lengths must agree.
    pub fn stacked(&self) -> Result<TimeSeriesTensor, CliError> {
        Ok(TimeSeriesTensor::stack(&self.series)?)
    }
}

pub fn synthesize_classes(spec: &ClassFixture, per_class: usize, seed: u64) -> Result<Instances, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Instances {
        series: Vec::new(),
        labels: Vec::new(),
    };
    for _ in 0..per_class {
        for &p in &spec.periods {
            let s = SynthSpec {
                phases: vec![rng.random_range(0.0..std::f64::consts::TAU)],
                noise_std: spec.noise_std,
                seed: rng.random(),
                ..SynthSpec::periodic(&[p], spec.length)
            };
            out.series.push(synthesize(&s)?);
            out.labels.push(format!("p{p}"));
        }
    }
    Ok(out)
}

pub fn class_split(cfg: &DataConfig) -> Result<(Instances, Instances), CliError> {
    let from_manifest = |path: &Path| -> Result<Instances, CliError> {
        let items = load_manifest(path, cfg.has_timestamp)?;
        Ok(Instances {
            labels: items.iter().map(|i| i.label.clone()).collect(),
            series: items.into_iter().map(|i| i.series).collect(),
        })
    };
    match (&cfg.train_manifest, &cfg.test_manifest, &cfg.classes) {
        (Some(tr), Some(te), _) => Ok((from_manifest(tr)?, from_manifest(te)?)),
        (None, None, Some(spec)) => Ok((
            synthesize_classes(spec, spec.train_per_class, spec.seed)?,
            synthesize_classes(spec, spec.test_per_class, spec.seed.wrapping_add(1))?,
        )),
        _ => Err(CliError::Config(
            "classification needs data.train_manifest and data.test_manifest, or a [data.classes] section".into(),
        )),
    }
}

/// Training data for a config: the training instances when the config
/// describes a classification dataset, the stream otherwise.
pub fn training_data(cfg: &DataConfig) -> Result<(TimeSeriesTensor, Window, Option<FeatureStats>), CliError> {
    let is_classification = cfg.input.is_none()
        && cfg.synthetic.is_none()
        && (cfg.classes.is_some() || cfg.train_manifest.is_some());
    if is_classification {
        let (train, _) = class_split(cfg)?;
        let stacked = train.stacked()?;
        let w = stacked.full_window();
        Ok((stacked, w, None))
    } else {
        let p = prepare_stream(cfg)?;
        Ok((p.series, p.train, p.stats))
    }
}

/// Writes a single-series tensor as CSV with a leading `t` column.
pub fn write_stream_csv(t: &TimeSeriesTensor, path: &Path) -> Result<(), CliError> {
    let mut text = String::from("t");
    for f in 0..t.n_features() {
        text.push_str(&format!(",f{f}"));
    }
    text.push('\n');
    let v: &Array3<f64> = t.values();
    for time in 0..t.n_time() {
        text.push_str(&time.to_string());
        for f in 0..t.n_features() {
            text.push_str(&format!(",{}", v[[0, time, f]]));
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
