//! Task heads on frozen representations: ridge forecasting, RBF kernel ridge
//! classification and masked-last-point anomaly scoring, with their metrics.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::timeseries::{TimeSeriesTensor, Window};

pub const RIDGE_ALPHAS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];
pub const KERNEL_LAMBDAS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

fn check_rows(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::MismatchedShapes(format!(
            "{} feature rows vs {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    Ok(())
}

/// Linear map from a representation vector to the flattened forecast
/// `h·F + f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastHead {
    /// `(F′, H·F)`.
    pub weights: Array2<f64>,
    pub intercept: Vec<f64>,
    pub alpha: f64,
    pub horizon: usize,
}

impl ForecastHead {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::MismatchedShapes(format!(
                "head expects {} features, got {}",
                self.weights.nrows(),
                x.ncols()
            )));
        }
        let mut out = x.dot(&self.weights);
        for mut row in out.rows_mut() {
            row.iter_mut().zip(&self.intercept).for_each(|(v, b)| *v += b);
        }
        Ok(out)
    }
}

/// Closed-form ridge with an unpenalised intercept.
pub fn fit_ridge(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, alpha: f64, horizon: usize) -> Result<ForecastHead> {
    check_rows(&x, &y)?;
    let (n, p) = x.dim();
    if n < p + 1 {
        return Err(Error::InputTooShort { needed: p + 1, got: n });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("ridge alpha must be positive, got {alpha}")));
    }
    let mx = x.mean_axis(Axis(0)).expect("nonempty");
    let my = y.mean_axis(Axis(0)).expect("nonempty");
    let xc = to_dmatrix((&x - &mx).view());
    let yc = to_dmatrix((&y - &my).view());
    let mut gram = xc.transpose() * &xc;
    for i in 0..p {
        gram[(i, i)] += alpha;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("ridge normal equations are not positive definite".into()))?;
    let w = chol.solve(&(xc.transpose() * yc));
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite ridge solution".into()));
    }
    let weights = Array2::from_shape_fn((p, y.ncols()), |(i, j)| w[(i, j)]);
    let intercept = (&my - &mx.dot(&weights)).to_vec();
    Ok(ForecastHead {
        weights,
        intercept,
        alpha,
        horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn forecast_metrics(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<ForecastMetrics> {
    if pred.dim() != target.dim() {
        return Err(Error::MismatchedShapes(format!(
            "predictions {:?} vs targets {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no forecast entries to score".into()));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
    }
    Ok(ForecastMetrics { mse: se / n, mae: ae / n })
}

pub fn evaluate_forecast(
    head: &ForecastHead,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<ForecastMetrics> {
    check_rows(&x, &y)?;
    forecast_metrics(head.predict(x)?.view(), y)
}

/// Fits one ridge head per `alphas` entry and keeps the one with the lowest
/// validation MSE (ties go to the earlier entry).
pub fn fit_forecaster(
    train_x: ArrayView2<'_, f64>,
    train_y: ArrayView2<'_, f64>,
    val_x: ArrayView2<'_, f64>,
    val_y: ArrayView2<'_, f64>,
    alphas: &[f64],
    horizon: usize,
) -> Result<ForecastHead> {
    let mut best: Option<(f64, ForecastHead)> = None;
    for &alpha in alphas {
        let head = fit_ridge(train_x, train_y, alpha, horizon)?;
        let mse = evaluate_forecast(&head, val_x, val_y)?.mse;
        if best.as_ref().is_none_or(|(b, _)| mse < *b) {
            best = Some((mse, head));
        }
    }
    best.map(|(_, h)| h)
        .ok_or_else(|| Error::InvalidConfig("empty ridge alpha grid".into()))
}

/// Forecast samples for every origin `t` in `range` whose next `horizon`
/// values also lie in `range`: features are `reps[n, t, :]`, targets are
/// `values[n, t+1..=t+horizon, :]` flattened as `h·F + f`.
///
/// `reps` must be the causal encoding of the full series, so the feature row
/// for origin `t` only sees inputs up to `t`.
pub fn forecast_samples(
    reps: ArrayView3<'_, f64>,
    data: &TimeSeriesTensor,
    range: Window,
    horizon: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    range.check_within(data.n_time())?;
    let (n, t, fo) = reps.dim();
    if (n, t) != (data.n_series(), data.n_time()) {
        return Err(Error::MismatchedShapes(format!(
            "representation {:?} does not cover data ({}, {})",
            (n, t),
            data.n_series(),
            data.n_time()
        )));
    }
    if horizon == 0 || range.len() <= horizon {
        return Err(Error::DatasetTooShort(format!(
            "range of {} steps leaves no origin for horizon {horizon}",
            range.len()
        )));
    }
    let f = data.n_features();
    let origins: Vec<usize> = (range.start..=range.end - horizon).collect();
    let rows = n * origins.len();
    let mut x = Array2::zeros((rows, fo));
    let mut y = Array2::zeros((rows, horizon * f));
    let values = data.values();
    let mut r = 0;
    for s_idx in 0..n {
        for &o in &origins {
            x.row_mut(r).assign(&reps.slice(s![s_idx, o, ..]));
            let future = values.slice(s![s_idx, o + 1..=o + horizon, ..]);
            y.row_mut(r).iter_mut().zip(future.iter()).for_each(|(d, v)| *d = *v);
            r += 1;
        }
    }
    Ok((x, y))
}

/// Max over the time axis: `(N, L, F′) → (N, F′)`.
pub fn instance_representation(rep: ArrayView3<'_, f64>) -> Array2<f64> {
    rep.fold_axis(Axis(1), f64::NEG_INFINITY, |a, b| a.max(*b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dissimilarity {
    #[default]
    L1,
    L2,
    Cosine,
}

impl Dissimilarity {
    /// Distance between two representation vectors; `L1` is the mean
    /// absolute difference and `L2` the root mean squared difference.
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        match self {
            Dissimilarity::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n,
            Dissimilarity::L2 => (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt(),
            Dissimilarity::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 && nb == 0.0 {
                    0.0
                } else if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// RBF kernel ridge regression on ±1 one-vs-rest targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead<L> {
    pub gamma: f64,
    pub lambda: f64,
    /// `(n, F′)` training representations.
    pub support: Array2<f64>,
    /// `(n, classes)` dual coefficients.
    pub coefficients: Array2<f64>,
    /// Sorted class labels, one per coefficient column.
    pub classes: Vec<L>,
}

/// `exp(-γ‖aᵢ − bⱼ‖²)` for every row pair.
pub fn rbf_kernel(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, gamma: f64) -> Array2<f64> {
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            let d2: f64 = ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum();
            k[[i, j]] = (-gamma * d2).exp();
        }
    }
    k
}

/// `1 / (F′ · Var(x))` over every entry of `x`; 1 when `x` is constant.
pub fn default_gamma(x: ArrayView2<'_, f64>) -> f64 {
    let var = x.var(0.0);
    if var > 0.0 && x.ncols() > 0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

fn one_vs_rest<L: Ord + Clone>(labels: &[L]) -> Result<(Vec<L>, DMatrix<f64>)> {
    let classes: Vec<L> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 classes, found {}",
            classes.len()
        )));
    }
    let y = DMatrix::from_fn(labels.len(), classes.len(), |i, c| {
        if labels[i] == classes[c] {
            1.0
        } else {
            -1.0
        }
    });
    Ok((classes, y))
}

fn argmax_row(row: impl Iterator<Item = f64>) -> usize {
    // strict comparison keeps the first (smallest-label) column on ties
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Fits the classifier, choosing `λ` from `lambdas` by leave-one-out accuracy
/// on the training set (ties go to the earlier entry).
pub fn fit_classifier<L: Ord + Clone>(
    x: ArrayView2<'_, f64>,
    labels: &[L],
    gamma: Option<f64>,
    lambdas: &[f64],
) -> Result<ClassifierHead<L>> {
    if x.nrows() != labels.len() {
        return Err(Error::MismatchedShapes(format!(
            "{} representations vs {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let (classes, y) = one_vs_rest(labels)?;
    let gamma = gamma.unwrap_or_else(|| default_gamma(x));
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("kernel gamma must be positive, got {gamma}")));
    }
    let k = to_dmatrix(rbf_kernel(x, x, gamma).view());
    let n = labels.len();
    let mut best: Option<(usize, f64, DMatrix<f64>)> = None;
    for &lambda in lambdas {
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("kernel ridge lambda must be positive, got {lambda}")));
        }
        let mut reg = k.clone();
        for i in 0..n {
            reg[(i, i)] += lambda;
        }
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::SingularSystem("kernel system is not positive definite".into()))?;
        let h = chol.inverse();
        let a = &h * &y;
        // closed-form leave-one-out decision values: y − A / diag(H)
        let correct = (0..n)
            .filter(|&i| {
                let loo = (0..classes.len()).map(|c| y[(i, c)] - a[(i, c)] / h[(i, i)]);
                classes[argmax_row(loo)] == labels[i]
            })
            .count();
        if best.as_ref().is_none_or(|(b, _, _)| correct > *b) {
            best = Some((correct, lambda, a));
        }
    }
    let (_, lambda, a) = best.ok_or_else(|| Error::InvalidConfig("empty lambda grid".into()))?;
    Ok(ClassifierHead {
        gamma,
        lambda,
        support: x.to_owned(),
        coefficients: Array2::from_shape_fn((n, classes.len()), |(i, c)| a[(i, c)]),
        classes,
    })
}

impl<L: Clone> ClassifierHead<L> {
    /// `(rows, classes)` one-vs-rest scores.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.support.ncols() {
            return Err(Error::MismatchedShapes(format!(
                "classifier expects {} features, got {}",
                self.support.ncols(),
                x.ncols()
            )));
        }
        Ok(rbf_kernel(x, self.support.view(), self.gamma).dot(&self.coefficients))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<L>> {
        let scores = self.scores(x)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|r| self.classes[argmax_row(r.iter().copied())].clone())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and the unweighted mean of per-class F1 over classes present in
/// either list (a class with no true or predicted members scores 0).
pub fn classification_metrics<L: Ord + Clone>(truth: &[L], predicted: &[L]) -> Result<ClassificationMetrics> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::MismatchedShapes(format!(
            "{} labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let correct = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    let classes: BTreeSet<&L> = truth.iter().chain(predicted).collect();
    let f1_sum: f64 = classes
        .iter()
        .map(|c| {
            let tp = truth.iter().zip(predicted).filter(|(t, p)| t == c && p == c).count() as f64;
            let fp = truth.iter().zip(predicted).filter(|(t, p)| t != c && p == c).count() as f64;
            let fnn = truth.iter().zip(predicted).filter(|(t, p)| t == c && p != c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fnn)
            }
        })
        .sum();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: f1_sum / classes.len() as f64,
    })
}

/// Scores every timestep `t ≥ context − 1` of `stream` by the dissimilarity
/// between the final-timestep representations of the window ending at `t`
/// with and without its last point zeroed. Entry `i` of the result belongs to
/// time `context − 1 + i`; series are averaged.
///
/// Windows longer than the encoder's receptive field are cut to it, which
/// leaves the final-timestep representation unchanged.
pub fn anomaly_scores(
    params: &EncoderParams,
    stream: &TimeSeriesTensor,
    context: usize,
    dissimilarity: Dissimilarity,
) -> Result<Vec<f64>> {
    let t_len = stream.n_time();
    if context == 0 || t_len < context {
        return Err(Error::StreamTooShort { needed: context.max(1), got: t_len });
    }
    let eff = context.min(params.config.receptive_field());
    let (n, _, f) = stream.values().dim();
    let origins: Vec<usize> = (context - 1..t_len).collect();
    let mut scores = Vec::with_capacity(origins.len());
    const CHUNK: usize = 64;
    for chunk in origins.chunks(CHUNK) {
        let rows = chunk.len() * n;
        let mut plain = Array3::zeros((rows, eff, f));
        for (ci, &t) in chunk.iter().enumerate() {
            let w = stream.values().slice(s![.., t + 1 - eff..=t, ..]);
            plain.slice_mut(s![ci * n..(ci + 1) * n, .., ..]).assign(&w);
        }
        let mut masked = plain.clone();
        masked.slice_mut(s![.., eff - 1, ..]).fill(0.0);
        let ya = encode(params, plain.view())?;
        let yb = encode(params, masked.view())?;
        for ci in 0..chunk.len() {
            let mut acc = 0.0;
            for s_idx in 0..n {
                let r = ci * n + s_idx;
                let a = ya.slice(s![r, eff - 1, ..]).to_vec();
                let b = yb.slice(s![r, eff - 1, ..]).to_vec();
                acc += dissimilarity.between(&a, &b);
            }
            scores.push(acc / n as f64);
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub threshold: f64,
    pub predicted: Vec<bool>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when nothing was predicted anomalous, so precision is reported as 0.
    pub precision_defined: bool,
    /// False when the labels contain no anomaly, so recall is reported as 0.
    pub recall_defined: bool,
}

/// Linear-interpolation quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Flags scores strictly above their `(1 − ratio)` quantile and scores the
/// flags point-wise against `labels`.
pub fn threshold_and_score(scores: &[f64], labels: &[bool], ratio: f64) -> Result<AnomalyReport> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::BadRatio(ratio));
    }
    if scores.len() != labels.len() {
        return Err(Error::MismatchedShapes(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no anomaly scores".into()));
    }
    let threshold = quantile(scores, 1.0 - ratio);
    let predicted: Vec<bool> = scores.iter().map(|s| *s > threshold).collect();
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let precision_defined = tp + fp > 0;
    let recall_defined = tp + fnn > 0;
    let precision = if precision_defined { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if recall_defined { tp as f64 / (tp + fnn) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(AnomalyReport {
        threshold,
        predicted,
        precision,
        recall,
        f1,
        precision_defined,
        recall_defined,
    })
}
