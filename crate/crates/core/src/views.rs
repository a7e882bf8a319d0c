//! Periodic-shift view pairs and timestamp masking.

use ndarray::{Array3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodicity::PeriodEstimate;
use crate::timeseries::{TimeSeriesTensor, Window};

/// An original window and its copy shifted by `round(a · p̂)` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPair {
    pub original: Window,
    pub shifted: Window,
    pub shift_multiple: i64,
    pub shift_steps: i64,
    pub period_used: f64,
}

/// Shift in steps for `a` periods; a single rounding of the product.
pub fn shift_steps(a: i64, period: f64) -> i64 {
    (a as f64 * period).round() as i64
}

/// All nonzero `a` for which a window of `len` steps starting at `start` and
/// its shift by `round(a·period)` both fit in `range`.
pub fn feasible_shift_multiples(range: Window, len: usize, period: f64, start: usize) -> Vec<i64> {
    let lo = range.start as i64;
    let max_start = range.end as i64 - len as i64 + 1;
    let t1 = start as i64;
    if len < 2 || t1 < lo || t1 > max_start || !(period > 0.0) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut a = -1;
    while t1 + shift_steps(a, period) >= lo {
        out.push(a);
        a -= 1;
    }
    out.reverse();
    let mut a = 1;
    while t1 + shift_steps(a, period) <= max_start {
        out.push(a);
        a += 1;
    }
    out
}

fn start_is_feasible(lo: i64, max_start: i64, t1: i64, step: i64) -> bool {
    t1 + step <= max_start || t1 - step >= lo
}

/// Samples a view pair whose windows both lie inside `range`.
///
/// The start is uniform over starts admitting at least one nonzero shift and
/// `a` is uniform over that start's feasible multiples.
pub fn sample_view_pair_in<R: Rng + ?Sized>(
    range: Window,
    len: usize,
    period: f64,
    rng: &mut R,
) -> Result<ViewPair> {
    let infeasible = || Error::NoFeasibleShift {
        window: len,
        period,
        n_time: range.len(),
    };
    let one_period = shift_steps(1, period);
    if len < 2 || !(period >= 1.0) || range.len() < len + one_period as usize {
        return Err(infeasible());
    }
    let lo = range.start as i64;
    let max_start = range.end as i64 - len as i64 + 1;

    let mut start = None;
    for _ in 0..64 {
        let t1 = rng.random_range(lo..=max_start);
        if start_is_feasible(lo, max_start, t1, one_period) {
            start = Some(t1);
            break;
        }
    }
    let t1 = match start {
        Some(t1) => t1,
        None => {
            let feasible: Vec<i64> = (lo..=max_start)
                .filter(|t1| start_is_feasible(lo, max_start, *t1, one_period))
                .collect();
            if feasible.is_empty() {
                return Err(infeasible());
            }
            feasible[rng.random_range(0..feasible.len())]
        }
    } as usize;

    let multiples = feasible_shift_multiples(range, len, period, t1);
    if multiples.is_empty() {
        return Err(infeasible());
    }
    let a = multiples[rng.random_range(0..multiples.len())];
    let steps = shift_steps(a, period);
    let shifted_start = (t1 as i64 + steps) as usize;
    Ok(ViewPair {
        original: Window::with_len(t1, len)?,
        shifted: Window::with_len(shifted_start, len)?,
        shift_multiple: a,
        shift_steps: steps,
        period_used: period,
    })
}

/// Samples a view pair over the full time axis of `t`.
pub fn sample_view_pair<R: Rng + ?Sized>(
    t: &TimeSeriesTensor,
    len: usize,
    estimate: &PeriodEstimate,
    rng: &mut R,
) -> Result<ViewPair> {
    sample_view_pair_in(t.full_window(), len, estimate.period, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    RandomTimestamps,
    LastPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub mask_ratio: f64,
    pub mode: MaskMode,
    pub seed: u64,
}

impl MaskSpec {
    pub fn last_point() -> Self {
        Self {
            mask_ratio: 0.0,
            mode: MaskMode::LastPoint,
            seed: 0,
        }
    }

    /// Per-timestamp indicator for a window of `len` steps.
    pub fn indicator(&self, len: usize) -> Result<Vec<bool>> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidConfig(format!(
                "mask ratio {} outside [0, 1]",
                self.mask_ratio
            )));
        }
        let mut mask = vec![false; len];
        match self.mode {
            MaskMode::LastPoint => {
                if let Some(last) = mask.last_mut() {
                    *last = true;
                }
            }
            MaskMode::RandomTimestamps => {
                let count = ((self.mask_ratio * len as f64).round() as usize).min(len);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for i in index::sample(&mut rng, len, count) {
                    mask[i] = true;
                }
            }
        }
        Ok(mask)
    }
}

/// A window slice with some timestamps zeroed across all features.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedWindow {
    pub values: Array3<f64>,
    pub mask: Vec<bool>,
}

impl MaskedWindow {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
            .collect()
    }
}

/// Zeroes every timestamp flagged in `mask` along the time axis.
pub fn mask_in_place(values: &mut Array3<f64>, mask: &[bool]) {
    for (t, mut lane) in values.axis_iter_mut(Axis(1)).enumerate() {
        if mask[t] {
            lane.fill(0.0);
        }
    }
}

pub fn apply_mask(t: &TimeSeriesTensor, w: Window, m: MaskSpec) -> Result<MaskedWindow> {
    let mut values = t.window_view(w)?.to_owned();
    let mask = m.indicator(w.len())?;
    mask_in_place(&mut values, &mask);
    Ok(MaskedWindow { values, mask })
}
