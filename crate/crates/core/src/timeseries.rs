//! Time-series data model: the (series × time × feature) tensor, windows,
//! CSV ingestion, synthetic fixtures, normalization and chronological splits.

use std::path::{Path, PathBuf};

use ndarray::{s, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite-valued tensor indexed `(series, time, feature)` with at least two
/// time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTensor {
    values: Array3<f64>,
}

impl TimeSeriesTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (n, t, f) = values.dim();
        if n == 0 || f == 0 {
            return Err(Error::EmptyInput(format!("shape ({n}, {t}, {f}) has an empty axis")));
        }
        if t < 2 {
            return Err(Error::EmptyInput(format!("need at least 2 time steps, got {t}")));
        }
        if let Some(((series, time, feature), _)) =
            values.indexed_iter().find(|(_, v)| !v.is_finite())
        {
            return Err(Error::NonFinite { series, time, feature });
        }
        Ok(Self { values })
    }

    /// Builds an `N = 1` tensor from per-feature columns of equal length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let f = columns.len();
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::MismatchedShapes("columns differ in length".into()));
        }
        let values = Array3::from_shape_fn((1, t, f), |(_, ti, fi)| columns[fi][ti]);
        Self::new(values)
    }

    pub fn n_series(&self) -> usize {
        self.values.dim().0
    }

    pub fn n_time(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_features(&self) -> usize {
        self.values.dim().2
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    /// View of the time range covered by `w`, all series and features.
    pub fn window_view(&self, w: Window) -> Result<ArrayView3<'_, f64>> {
        w.check_within(self.n_time())?;
        Ok(self.values.slice(s![.., w.start..=w.end, ..]))
    }

    pub fn window(&self, w: Window) -> Result<TimeSeriesTensor> {
        Ok(Self {
            values: self.window_view(w)?.to_owned(),
        })
    }

    /// Time profile of one (series, feature) slice.
    pub fn slice(&self, series: usize, feature: usize) -> Vec<f64> {
        self.values.slice(s![series, .., feature]).to_vec()
    }

    /// Stacks tensors of equal time and feature extent along the series axis.
    pub fn stack(parts: &[TimeSeriesTensor]) -> Result<TimeSeriesTensor> {
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::MismatchedShapes(format!("cannot stack instances: {e}")))?;
        Self::new(values)
    }

    /// Full time range `[0, T-1]`.
    pub fn full_window(&self) -> Window {
        Window {
            start: 0,
            end: self.n_time() - 1,
        }
    }
}

/// Inclusive time range `[start, end]` of length at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if end < start + 1 {
            return Err(Error::InvalidWindow {
                start,
                end,
                n_time: 0,
            });
        }
        Ok(Self { start, end })
    }

    pub fn with_len(start: usize, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidWindow {
                start,
                end: start + len.saturating_sub(1),
                n_time: 0,
            });
        }
        Self::new(start, start + len - 1)
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check_within(&self, n_time: usize) -> Result<()> {
        if self.end >= n_time || self.end <= self.start {
            return Err(Error::InvalidWindow {
                start: self.start,
                end: self.end,
                n_time,
            });
        }
        Ok(())
    }
}

/// Reads one multivariate series (`N = 1`) from a headed CSV file.
///
/// With `has_timestamp` the first column is skipped; every other column must
/// parse as a finite number.
pub fn load_csv(path: &Path, has_timestamp: bool) -> Result<TimeSeriesTensor> {
    let malformed = |reason: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!(),
            },
            _ => malformed(e.to_string()),
        })?;
    let header_len = reader.headers().map_err(|e| malformed(e.to_string()))?.len();
    let skip = usize::from(has_timestamp);
    if header_len <= skip {
        return Err(malformed("no numeric columns".into()));
    }
    let n_features = header_len - skip;
    let mut columns = vec![Vec::new(); n_features];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        for (f, cell) in record.iter().skip(skip).enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                malformed(format!("row {}: cell {cell:?} is not numeric", row + 1))
            })?;
            if !value.is_finite() {
                return Err(malformed(format!("row {}: non-finite value {cell:?}", row + 1)));
            }
            columns[f].push(value);
        }
    }
    let t = columns[0].len();
    if t < 2 {
        return Err(Error::EmptyInput(format!(
            "{} has {t} data row(s), need at least 2",
            path.display()
        )));
    }
    TimeSeriesTensor::from_columns(&columns)
}

/// Writes series 0 of `t` as a headed CSV with columns `f0, f1, ...`.
pub fn write_csv(t: &TimeSeriesTensor, path: &Path) -> Result<()> {
    if t.n_series() != 1 {
        return Err(Error::MismatchedShapes(format!(
            "CSV holds one series, tensor has {}",
            t.n_series()
        )));
    }
    let mut out = String::new();
    let header: Vec<String> = (0..t.n_features()).map(|f| format!("f{f}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for ti in 0..t.n_time() {
        let row: Vec<String> = (0..t.n_features())
            .map(|f| format!("{}", t.values[[0, ti, f]]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One labelled instance from a label manifest.
#[derive(Debug, Clone)]
pub struct LabeledInstance {
    pub file: PathBuf,
    pub label: String,
    pub series: TimeSeriesTensor,
}

/// Reads a `file,label` manifest; file paths are relative to the manifest.
pub fn load_manifest(path: &Path, has_timestamp: bool) -> Result<Vec<LabeledInstance>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::MalformedCsv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedCsv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let (Some(file), Some(label)) = (record.get(0), record.get(1)) else {
            return Err(Error::MalformedCsv {
                path: path.to_path_buf(),
                reason: "manifest rows need `file,label`".into(),
            });
        };
        let file = base.join(file.trim());
        let series = load_csv(&file, has_timestamp)?;
        out.push(LabeledInstance {
            file,
            label: label.trim().to_string(),
            series,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no instances", path.display())));
    }
    Ok(out)
}

/// Sum-of-sinusoids fixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
    pub noise_std: f64,
    pub trend_slope: f64,
    pub length: usize,
    pub n_series: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Two thousand hourly steps of a daily cycle.
    fn default() -> Self {
        Self::periodic(&[24.0], 2000)
    }
}

impl SynthSpec {
    /// Noise-free sinusoids with unit amplitude and zero phase.
    pub fn periodic(periods: &[f64], length: usize) -> Self {
        Self {
            periods: periods.to_vec(),
            amplitudes: vec![1.0; periods.len()],
            phases: vec![0.0; periods.len()],
            noise_std: 0.0,
            trend_slope: 0.0,
            length,
            n_series: 1,
            n_features: 1,
            seed: 0,
        }
    }

    /// Mean power of the deterministic sinusoidal part, `Σ A²/2`.
    pub fn signal_power(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a / 2.0).sum()
    }

    /// Sets `noise_std` so that the signal-to-noise ratio equals `snr_db`.
    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.noise_std = (self.signal_power() / 10f64.powf(snr_db / 10.0)).sqrt();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.periods.is_empty() {
            return Err(Error::InvalidSpec("no periods given".into()));
        }
        if self.amplitudes.len() != self.periods.len() || self.phases.len() != self.periods.len() {
            return Err(Error::InvalidSpec(
                "periods, amplitudes and phases must have equal length".into(),
            ));
        }
        if let Some(p) = self.periods.iter().find(|p| !(**p > 1.0) || !p.is_finite()) {
            return Err(Error::InvalidSpec(format!("period {p} must exceed 1")));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidSpec(format!("noise_std {} must be >= 0", self.noise_std)));
        }
        if self.length < 2 || self.n_series == 0 || self.n_features == 0 {
            return Err(Error::InvalidSpec("need length >= 2 and nonzero N, F".into()));
        }
        Ok(())
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<TimeSeriesTensor> {
    spec.validate()?;
    let tau = std::f64::consts::TAU;
    let clean: Vec<f64> = (0..spec.length)
        .map(|t| {
            let tf = t as f64;
            let periodic: f64 = spec
                .periods
                .iter()
                .zip(&spec.amplitudes)
                .zip(&spec.phases)
                .map(|((p, a), ph)| a * (tau * tf / p + ph).sin())
                .sum();
            periodic + spec.trend_slope * tf
        })
        .collect();
    let mut values = Array3::zeros((spec.n_series, spec.length, spec.n_features));
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        for ((_, t, _), v) in values.indexed_iter_mut() {
            *v = clean[t] + normal.sample(&mut rng);
        }
    } else {
        for ((_, t, _), v) in values.indexed_iter_mut() {
            *v = clean[t];
        }
    }
    TimeSeriesTensor::new(values)
}

/// Per-feature statistics used by [`zscore_normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Applies the stored statistics to another tensor with the same features.
    pub fn apply(&self, t: &TimeSeriesTensor) -> Result<TimeSeriesTensor> {
        if t.n_features() != self.mean.len() {
            return Err(Error::MismatchedShapes(format!(
                "stats cover {} features, tensor has {}",
                self.mean.len(),
                t.n_features()
            )));
        }
        let mut values = t.values.clone();
        for ((_, _, f), v) in values.indexed_iter_mut() {
            *v = if self.std[f] > 0.0 {
                (*v - self.mean[f]) / self.std[f]
            } else {
                0.0
            };
        }
        TimeSeriesTensor::new(values)
    }
}

/// Z-scores each feature with the population mean and standard deviation
/// computed over `stats_from` (pooled across series). Constant features map
/// to zero and report a standard deviation of 0.
pub fn zscore_normalize(
    t: &TimeSeriesTensor,
    stats_from: Window,
) -> Result<(TimeSeriesTensor, FeatureStats)> {
    let view = t.window_view(stats_from)?;
    let f_count = t.n_features();
    let mut mean = vec![0.0; f_count];
    let mut std = vec![0.0; f_count];
    for f in 0..f_count {
        let lane = view.slice(s![.., .., f]);
        let count = lane.len() as f64;
        let m = lane.sum() / count;
        let var = lane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
        let sd = var.sqrt();
        mean[f] = m;
        std[f] = if sd > 1e-12 * m.abs().max(1.0) { sd } else { 0.0 };
    }
    let stats = FeatureStats { mean, std };
    Ok((stats.apply(t)?, stats))
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let ok = |x: f64| x > 0.0 && x < 1.0;
        if !(ok(train) && ok(val) && ok(test)) || (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions {train}:{val}:{test} must lie in (0,1) and sum to 1"
            )));
        }
        Ok(Self { train, val, test })
    }

    /// Builds a split from integer ratios such as `7:1:2`.
    pub fn from_ratio(train: u32, val: u32, test: u32) -> Result<Self> {
        let total = f64::from(train + val + test);
        Self::new(
            f64::from(train) / total,
            f64::from(val) / total,
            f64::from(test) / total,
        )
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Contiguous train/validation/test windows, boundaries at
/// `floor(T · cumulative fraction)`.
pub fn chronological_split(n_time: usize, s: SplitSpec) -> Result<[Window; 3]> {
    // Guards floor() against cumulative sums like 0.7 + 0.1 = 0.7999…
    let boundary = |frac: f64| ((n_time as f64) * frac + 1e-9).floor() as usize;
    let b1 = boundary(s.train).min(n_time);
    let b2 = boundary(s.train + s.val).min(n_time);
    let lens = [b1, b2.saturating_sub(b1), n_time.saturating_sub(b2)];
    for (name, len) in ["train", "validation", "test"].iter().zip(lens) {
        if len < 2 {
            return Err(Error::SplitTooSmall(format!(
                "{name} split has {len} step(s) for T = {n_time}"
            )));
        }
    }
    Ok([
        Window::new(0, b1 - 1)?,
        Window::new(b1, b2 - 1)?,
        Window::new(b2, n_time - 1)?,
    ])
}
