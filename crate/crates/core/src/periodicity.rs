//! Dominant-period detection from the batch-averaged periodogram.

use std::collections::BTreeMap;

use ndarray::ArrayView3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{batch_periodogram, Periodogram, SpectralTransform};
use crate::timeseries::{TimeSeriesTensor, Window};

/// Absolute floor on peak power below which no period is reported.
pub const MIN_PEAK_POWER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    pub dominant_bin: usize,
    pub period: f64,
    pub power_at_peak: f64,
    pub window_length: usize,
    /// Set when the implied period exceeds half the window, i.e. fewer than
    /// two full cycles were observed.
    pub low_confidence: bool,
    pub averaged_periodogram: Periodogram,
}

/// Elementwise mean of periodograms sharing length and transform.
pub fn average_periodogram(grams: &[Periodogram]) -> Result<Periodogram> {
    let first = grams
        .first()
        .ok_or_else(|| Error::MismatchedShapes("no periodograms to average".into()))?;
    let mut power = vec![0.0; first.power.len()];
    for g in grams {
        if g.n_input != first.n_input
            || g.transform != first.transform
            || g.power.len() != power.len()
        {
            return Err(Error::MismatchedShapes(format!(
                "periodogram of {} {:?} samples mixed with {} {:?}",
                g.n_input, g.transform, first.n_input, first.transform
            )));
        }
        for (acc, p) in power.iter_mut().zip(&g.power) {
            *acc += p;
        }
    }
    let count = grams.len() as f64;
    power.iter_mut().for_each(|p| *p /= count);
    Ok(Periodogram {
        power,
        n_input: first.n_input,
        transform: first.transform,
    })
}

/// Highest bin allowed to win the argmax; keeps the implied period at two
/// samples or more for both transforms.
fn max_eligible_bin(n: usize) -> usize {
    n / 2
}

/// Detects the dominant period of a `(series, time, feature)` block.
pub fn detect_period_in(
    values: ArrayView3<'_, f64>,
    transform: SpectralTransform,
) -> Result<PeriodEstimate> {
    let window_length = values.dim().1;
    if window_length < 4 {
        return Err(Error::InputTooShort {
            needed: 4,
            got: window_length,
        });
    }
    let batch = batch_periodogram(values, transform)?;
    let averaged = average_periodogram(&batch.grams)?;
    let last = max_eligible_bin(window_length).min(averaged.power.len() - 1);

    let mut best = 1;
    for j in 2..=last {
        if averaged.power[j] > averaged.power[best] {
            best = j;
        }
    }
    let peak = averaged.power[best];
    let threshold = MIN_PEAK_POWER.max(1e-20 * averaged.power[0]);
    if !(peak >= threshold) {
        return Err(Error::NoDominantPeriod { threshold });
    }
    let period = window_length as f64 / best as f64;
    Ok(PeriodEstimate {
        dominant_bin: best,
        period,
        power_at_peak: peak,
        window_length,
        low_confidence: period > window_length as f64 / 2.0,
        averaged_periodogram: averaged,
    })
}

/// `ŵ = argmax_{j ≥ 1} Φ̂_j` (ties to the smallest bin), `p̂ = len(w) / ŵ`.
pub fn detect_period(
    t: &TimeSeriesTensor,
    w: Window,
    transform: SpectralTransform,
) -> Result<PeriodEstimate> {
    detect_period_in(t.window_view(w)?, transform)
}

/// Counts of rounded detected periods over randomly placed windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodHistogram {
    pub window_length: usize,
    pub n_samples: usize,
    pub counts: BTreeMap<u64, usize>,
    /// Windows where no dominant period exists.
    pub none: usize,
}

impl PeriodHistogram {
    /// Most frequent period; ties go to the shorter period.
    pub fn mode(&self) -> Option<u64> {
        let mut best: Option<(u64, usize)> = None;
        for (&p, &c) in &self.counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((p, c));
            }
        }
        best.filter(|(_, c)| *c >= self.none).map(|(p, _)| p)
    }

    pub fn fraction_at(&self, period: u64) -> f64 {
        *self.counts.get(&period).unwrap_or(&0) as f64 / self.n_samples as f64
    }
}

pub fn period_histogram(
    t: &TimeSeriesTensor,
    window_length: usize,
    n_samples: usize,
    seed: u64,
    transform: SpectralTransform,
) -> Result<PeriodHistogram> {
    if window_length > t.n_time() {
        return Err(Error::InputTooShort {
            needed: window_length,
            got: t.n_time(),
        });
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_start = t.n_time() - window_length;
    let mut hist = PeriodHistogram {
        window_length,
        n_samples,
        counts: BTreeMap::new(),
        none: 0,
    };
    for _ in 0..n_samples {
        let start = rng.random_range(0..=max_start);
        let w = Window::with_len(start, window_length)?;
        match detect_period(t, w, transform) {
            Ok(est) => *hist.counts.entry(est.period.round() as u64).or_default() += 1,
            Err(Error::NoDominantPeriod { .. }) => hist.none += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(hist)
}
