//! The spectral-density invariance loss between two representations, flat and
//! hierarchical over temporal max pooling, with exact gradients for both
//! inputs.
//!
//! Representations are `(series, time, feature)` arrays. The flat loss is
//! `Σ_{n,f,j} |Φ(Y_{n,·,f})_j − Φ(Ŷ_{n,·,f})_j| / (N′·F′)`.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{SpectralTransform, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlossConfig {
    pub transform: SpectralTransform,
    pub pooling_scale: usize,
    pub hierarchical: bool,
    /// Also divide each slice's L1 distance by its bin count.
    pub normalize_by_bins: bool,
    /// Compute a level once pooling reaches a single time step.
    pub include_unit_level: bool,
}

impl Default for FlossConfig {
    fn default() -> Self {
        Self {
            transform: SpectralTransform::Dct,
            pooling_scale: 2,
            hierarchical: true,
            normalize_by_bins: false,
            include_unit_level: true,
        }
    }
}

impl FlossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hierarchical && self.pooling_scale < 2 {
            return Err(Error::BadScale(self.pooling_scale));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatLoss {
    pub loss: f64,
    pub grad_y: Array3<f64>,
    pub grad_yhat: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub per_level_losses: Vec<f64>,
    /// Time length at each level, starting with the input length.
    pub level_lengths: Vec<usize>,
    pub level_count: usize,
    pub total: f64,
    pub grad_y: Array3<f64>,
    pub grad_yhat: Array3<f64>,
}

fn check_pair(y: &ArrayView3<'_, f64>, yhat: &ArrayView3<'_, f64>) -> Result<()> {
    if y.dim() != yhat.dim() {
        return Err(Error::MismatchedShapes(format!(
            "representations differ: {:?} vs {:?}",
            y.dim(),
            yhat.dim()
        )));
    }
    let (n, l, f) = y.dim();
    if n == 0 || f == 0 {
        return Err(Error::MismatchedShapes(format!("empty representation {:?}", y.dim())));
    }
    if l < 2 {
        return Err(Error::InputTooShort { needed: 2, got: l });
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Flat loss for any time length ≥ 1.
fn flat_level(
    y: ArrayView3<'_, f64>,
    yhat: ArrayView3<'_, f64>,
    transform: SpectralTransform,
    normalize_by_bins: bool,
) -> FlatLoss {
    let (n_series, len, n_features) = y.dim();
    let bins = transform.bin_count(len);
    let mut scale = 1.0 / (n_series * n_features) as f64;
    if normalize_by_bins {
        scale /= bins as f64;
    }
    let mut grad_y = Array3::zeros(y.dim());
    let mut grad_yhat = Array3::zeros(y.dim());
    let mut total = 0.0;
    let mut a = vec![0.0; len];
    let mut b = vec![0.0; len];
    let mut up_a = vec![0.0; bins];
    let mut up_b = vec![0.0; bins];
    for n in 0..n_series {
        for f in 0..n_features {
            for t in 0..len {
                a[t] = y[[n, t, f]];
                b[t] = yhat[[n, t, f]];
            }
            let sa = Spectrum::compute(&a, transform);
            let sb = Spectrum::compute(&b, transform);
            let (pa, pb) = (sa.power(), sb.power());
            let mut slice_loss = 0.0;
            for j in 0..bins {
                let d = pa[j] - pb[j];
                slice_loss += d.abs();
                up_a[j] = sign(d) * scale;
                up_b[j] = -up_a[j];
            }
            total += slice_loss;
            let ga = sa.power_vjp(&up_a);
            let gb = sb.power_vjp(&up_b);
            for t in 0..len {
                grad_y[[n, t, f]] = ga[t];
                grad_yhat[[n, t, f]] = gb[t];
            }
        }
    }
    FlatLoss {
        loss: total * scale,
        grad_y,
        grad_yhat,
    }
}

pub fn floss_flat(
    y: ArrayView3<'_, f64>,
    yhat: ArrayView3<'_, f64>,
    transform: SpectralTransform,
) -> Result<FlatLoss> {
    check_pair(&y, &yhat)?;
    Ok(flat_level(y, yhat, transform, false))
}

/// Max-pooled representation plus, per output cell, the source time index.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Array3<f64>,
    pub argmax: Array3<usize>,
}

/// Non-overlapping temporal max pooling of width and stride `tau`. A trailing
/// partial window is kept; ties resolve to the earliest index.
pub fn maxpool_time(y: ArrayView3<'_, f64>, tau: usize) -> Result<Pooled> {
    if tau < 2 {
        return Err(Error::BadScale(tau));
    }
    let (n_series, len, n_features) = y.dim();
    if len == 0 {
        return Err(Error::InputTooShort { needed: 1, got: 0 });
    }
    let out_len = len.div_ceil(tau);
    let mut values = Array3::zeros((n_series, out_len, n_features));
    let mut argmax = Array3::zeros((n_series, out_len, n_features));
    for n in 0..n_series {
        for f in 0..n_features {
            for o in 0..out_len {
                let lo = o * tau;
                let hi = (lo + tau).min(len);
                let mut best = lo;
                for t in lo + 1..hi {
                    if y[[n, t, f]] > y[[n, best, f]] {
                        best = t;
                    }
                }
                values[[n, o, f]] = y[[n, best, f]];
                argmax[[n, o, f]] = best;
            }
        }
    }
    Ok(Pooled { values, argmax })
}

/// Routes a pooled-space gradient back to the pre-pooling time axis.
pub fn maxpool_backward(grad: &Array3<f64>, argmax: &Array3<usize>, input_len: usize) -> Array3<f64> {
    let (n_series, out_len, n_features) = grad.dim();
    let mut out = Array3::zeros((n_series, input_len, n_features));
    for n in 0..n_series {
        for o in 0..out_len {
            for f in 0..n_features {
                out[[n, argmax[[n, o, f]], f]] += grad[[n, o, f]];
            }
        }
    }
    out
}

/// Time lengths visited by the hierarchical loss for an input of length `len`.
pub fn level_lengths(len: usize, cfg: &FlossConfig) -> Vec<usize> {
    let mut out = vec![len];
    if !cfg.hierarchical {
        return out;
    }
    let mut cur = len;
    while cur > 1 {
        let next = cur.div_ceil(cfg.pooling_scale);
        if next < 2 && !cfg.include_unit_level {
            break;
        }
        out.push(next);
        cur = next;
    }
    out
}

/// Averages the flat loss over successive max-pooled resolutions of both
/// representations, back-propagating through every pooling step.
pub fn floss_hierarchical(
    y: ArrayView3<'_, f64>,
    yhat: ArrayView3<'_, f64>,
    cfg: &FlossConfig,
) -> Result<LossReport> {
    check_pair(&y, &yhat)?;
    cfg.validate()?;
    let lengths = level_lengths(y.dim().1, cfg);

    let mut levels = vec![flat_level(y, yhat, cfg.transform, cfg.normalize_by_bins)];
    let mut argmaxes: Vec<(Array3<usize>, Array3<usize>)> = Vec::new();
    let mut cur_y = y.to_owned();
    let mut cur_yhat = yhat.to_owned();
    for _ in 1..lengths.len() {
        let py = maxpool_time(cur_y.view(), cfg.pooling_scale)?;
        let pyhat = maxpool_time(cur_yhat.view(), cfg.pooling_scale)?;
        levels.push(flat_level(
            py.values.view(),
            pyhat.values.view(),
            cfg.transform,
            cfg.normalize_by_bins,
        ));
        argmaxes.push((py.argmax, pyhat.argmax));
        cur_y = py.values;
        cur_yhat = pyhat.values;
    }

    let d = levels.len();
    let per_level_losses: Vec<f64> = levels.iter().map(|l| l.loss).collect();
    let total = per_level_losses.iter().sum::<f64>() / d as f64;

    let mut levels = levels.into_iter().rev();
    let deepest = levels.next().expect("at least one level");
    let (mut gy, mut gyhat) = (deepest.grad_y, deepest.grad_yhat);
    for (k, level) in levels.enumerate() {
        let (am_y, am_yhat) = &argmaxes[d - 2 - k];
        let input_len = lengths[d - 2 - k];
        gy = level.grad_y + maxpool_backward(&gy, am_y, input_len);
        gyhat = level.grad_yhat + maxpool_backward(&gyhat, am_yhat, input_len);
    }
    let inv_d = 1.0 / d as f64;
    gy.mapv_inplace(|v| v * inv_d);
    gyhat.mapv_inplace(|v| v * inv_d);

    Ok(LossReport {
        per_level_losses,
        level_lengths: lengths,
        level_count: d,
        total,
        grad_y: gy,
        grad_yhat: gyhat,
    })
}

/// Dispatches to the flat or hierarchical loss according to `cfg`.
pub fn floss(y: ArrayView3<'_, f64>, yhat: ArrayView3<'_, f64>, cfg: &FlossConfig) -> Result<LossReport> {
    floss_hierarchical(y, yhat, cfg)
}
