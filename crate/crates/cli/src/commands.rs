//! The experiment behind each subcommand, separated from argument parsing
//! and file output so it can be driven in-process.

use std::collections::BTreeMap;

use floss_core::checkpoint::Checkpoint;
use floss_core::downstream::{
    anomaly_scores, classification_metrics, fit_classifier, fit_forecaster, forecast_metrics, forecast_samples,
    instance_representation, threshold_and_score,
};
use floss_core::encoder::encode;
use floss_core::periodicity::{detect_period, detect_period_in, period_histogram};
use floss_core::spectral::SpectralTransform;
use floss_core::timeseries::{TimeSeriesTensor, Window};
use floss_core::train::{train, TrainReport};
use floss_core::Error;
use ndarray::{Array2, Axis};

use crate::config::{ExperimentConfig, ForecastHeadChoice, TaskKind};
use crate::data::{class_split, prepare_stream_with, training_data};
use crate::report::{AblationRow, DetectReport, MetricsReport};
use crate::CliError;

pub fn detect(
    series: &TimeSeriesTensor,
    window: usize,
    samples: usize,
    transform: SpectralTransform,
    seed: u64,
) -> Result<DetectReport, CliError> {
    let hist = period_histogram(series, window, samples, seed, transform)?;
    let first = match detect_period(series, Window::with_len(0, window)?, transform) {
        Ok(est) => Some(est),
        Err(Error::NoDominantPeriod { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut histogram: BTreeMap<String, usize> =
        hist.counts.iter().map(|(p, c)| (p.to_string(), *c)).collect();
    histogram.insert("none".into(), hist.none);
    Ok(DetectReport {
        transform,
        window,
        samples,
        seed,
        dominant_bin: first.as_ref().map(|e| e.dominant_bin),
        period: first.as_ref().map(|e| e.period),
        power_at_peak: first.as_ref().map(|e| e.power_at_peak),
        low_confidence: first.as_ref().map(|e| e.low_confidence),
        histogram,
        mode: hist.mode(),
    })
}

/// Trains on the configured data and packages the result as a checkpoint.
pub fn run_train(cfg: &ExperimentConfig) -> Result<(Checkpoint, TrainReport), CliError> {
    let (series, range, stats) = training_data(&cfg.data)?;
    let mut encoder = cfg.encoder.clone();
    encoder.input_features = series.n_features();
    let (model, report) = train(&series, range, &encoder, &cfg.training, &cfg.floss)?;
    let ckpt = Checkpoint::new(model, cfg.training.clone(), cfg.floss, stats);
    Ok((ckpt, report))
}

/// Data behind the evaluation plots.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTrace {
    /// Prediction and truth for the first test origin, feature 0.
    Forecast { predicted: Vec<f64>, actual: Vec<f64> },
    Classify,
    /// Scores from time `first_time` on, with the chosen threshold.
    Anomaly { first_time: usize, scores: Vec<f64>, labels: Vec<bool>, threshold: f64 },
}

pub fn run_evaluate(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    task: TaskKind,
) -> Result<(MetricsReport, EvalTrace), CliError> {
    let mut report = MetricsReport::empty(task.as_str(), ckpt.training.scheme, ckpt.training.floss_weight, ckpt.seed);
    let detection = ckpt.training.detection_transform;
    let params = &ckpt.model.encoder;
    match task {
        TaskKind::Forecast => {
            let p = prepare_stream_with(&cfg.data, ckpt.normalization.as_ref())?;
            report.detected_period = detect_period_in(p.series.window_view(p.train)?, detection)
                .ok()
                .map(|e| e.period);
            let reps = encode(params, p.series.values().view())?;
            let h = cfg.training.horizon;
            let (test_x, test_y) = forecast_samples(reps.view(), &p.series, p.test, h)?;
            let trained = ckpt
                .model
                .forecast_head
                .as_ref()
                .filter(|_| ckpt.model.horizon == h);
            let pred = match (cfg.task.forecast_head, trained) {
                (ForecastHeadChoice::Trained, None) => {
                    return Err(CliError::Config(format!(
                        "checkpoint has no forecasting head for horizon {h}"
                    )))
                }
                (ForecastHeadChoice::Trained | ForecastHeadChoice::Auto, Some(head)) => {
                    let mut out = Array2::zeros(test_y.dim());
                    for (mut row, x) in out.rows_mut().into_iter().zip(test_x.rows()) {
                        row.assign(&ndarray::Array1::from(head.forward(&x.to_vec())));
                    }
                    out
                }
                _ => {
                    let (tx, ty) = forecast_samples(reps.view(), &p.series, p.train, h)?;
                    let (vx, vy) = forecast_samples(reps.view(), &p.series, p.val, h)?;
                    let head = fit_forecaster(tx.view(), ty.view(), vx.view(), vy.view(), &cfg.task.ridge_alphas, h)?;
                    head.predict(test_x.view())?
                }
            };
            let m = forecast_metrics(pred.view(), test_y.view())?;
            report.mse = Some(m.mse);
            report.mae = Some(m.mae);
            let f = p.series.n_features();
            let trace = EvalTrace::Forecast {
                predicted: pred.row(0).iter().step_by(f).copied().collect(),
                actual: test_y.row(0).iter().step_by(f).copied().collect(),
            };
            Ok((report, trace))
        }
        TaskKind::Classify => {
            let (train_set, test_set) = class_split(&cfg.data)?;
            report.detected_period = detect_period_in(train_set.stacked()?.values().view(), detection)
                .ok()
                .map(|e| e.period);
            let embed = |items: &[TimeSeriesTensor]| -> Result<Array2<f64>, CliError> {
                let rows = items
                    .iter()
                    .map(|t| Ok(instance_representation(encode(params, t.values().view())?.view())))
                    .collect::<Result<Vec<_>, CliError>>()?;
                let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
                ndarray::concatenate(Axis(0), &views).map_err(|e| CliError::Internal(e.to_string()))
            };
            let train_x = embed(&train_set.series)?;
            let test_x = embed(&test_set.series)?;
            let head = fit_classifier(train_x.view(), &train_set.labels, None, &cfg.task.kernel_lambdas)?;
            let predicted = head.predict(test_x.view())?;
            let m = classification_metrics(&test_set.labels, &predicted)?;
            report.accuracy = Some(m.accuracy);
            report.macro_f1 = Some(m.macro_f1);
            Ok((report, EvalTrace::Classify))
        }
        TaskKind::Anomaly => {
            let p = prepare_stream_with(&cfg.data, ckpt.normalization.as_ref())?;
            report.detected_period = detect_period_in(p.series.window_view(p.train)?, detection)
                .ok()
                .map(|e| e.period);
            let labels = p.labels.as_ref().ok_or_else(|| {
                CliError::Config("anomaly evaluation needs data.labels or a [data.spikes] section".into())
            })?;
            let context = cfg.task.anomaly_context;
            let first = p.test.start.max(context - 1);
            if first > p.test.end {
                return Err(Error::StreamTooShort { needed: context, got: p.test.end + 1 }.into());
            }
            let stream = p.series.window(Window::new(first + 1 - context, p.test.end)?)?;
            let scores = anomaly_scores(params, &stream, context, cfg.task.dissimilarity)?;
            let scored_labels = labels[first..=p.test.end].to_vec();
            let ratio = cfg.task.anomaly_ratio.unwrap_or_else(|| {
                scored_labels.iter().filter(|l| **l).count() as f64 / scored_labels.len() as f64
            });
            let r = threshold_and_score(&scores, &scored_labels, ratio)?;
            report.precision = Some(r.precision);
            report.recall = Some(r.recall);
            report.f1 = Some(r.f1);
            let trace = EvalTrace::Anomaly {
                first_time: first,
                scores,
                labels: scored_labels,
                threshold: r.threshold,
            };
            Ok((report, trace))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Weight,
    Tau,
    Transform,
    Hierarchical,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "weight" => Ok(Sweep::Weight),
            "tau" => Ok(Sweep::Tau),
            "transform" => Ok(Sweep::Transform),
            "hierarchical" => Ok(Sweep::Hierarchical),
            other => Err(format!("unknown sweep {other:?} (weight, tau, transform, hierarchical)")),
        }
    }
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Weight => "weight",
            Sweep::Tau => "tau",
            Sweep::Transform => "transform",
            Sweep::Hierarchical => "hierarchical",
        }
    }

    /// Labelled variants of `base`, in table order.
    pub fn cells(self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let with = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Sweep::Weight => [0.0, 0.1, 0.3, 0.5, 1.0, 2.0]
                .into_iter()
                .map(|w| (format!("{w}"), with(&|c| c.training.floss_weight = w)))
                .collect(),
            Sweep::Tau => [2, 3, 4, 8]
                .into_iter()
                .map(|t| (format!("tau={t}"), with(&|c| c.floss.pooling_scale = t)))
                .collect(),
            Sweep::Transform => {
                use SpectralTransform::{Dct, Dft};
                [(Dft, Dft), (Dft, Dct), (Dct, Dft)]
                    .into_iter()
                    .map(|(d, l)| {
                        let cfg = with(&|c| {
                            c.training.detection_transform = d;
                            c.floss.transform = l;
                        });
                        (format!("{}+{}", d.label(), l.label()), cfg)
                    })
                    .collect()
            }
            Sweep::Hierarchical => [true, false]
                .into_iter()
                .map(|h| {
                    let label = if h { "hierarchical" } else { "flat" };
                    (label.to_string(), with(&|c| c.floss.hierarchical = h))
                })
                .collect(),
        }
    }
}

/// Trains and evaluates every cell of a sweep with the base seed, so cells
/// differ only in the swept setting.
pub fn run_ablate(base: &ExperimentConfig, sweep: Sweep) -> Result<Vec<AblationRow>, CliError> {
    let mut rows = Vec::new();
    for (setting, cfg) in sweep.cells(base) {
        log::info!("ablation {}: {setting}", sweep.as_str());
        let (ckpt, _) = run_train(&cfg)?;
        let (m, _) = run_evaluate(&ckpt, &cfg, cfg.task.kind)?;
        rows.push(AblationRow {
            sweep: sweep.as_str().to_string(),
            setting,
            detection_transform: cfg.training.detection_transform,
            loss_transform: cfg.floss.transform,
            floss_weight: cfg.training.floss_weight,
            pooling_scale: cfg.floss.pooling_scale,
            hierarchical: cfg.floss.hierarchical,
            mse: m.mse,
            mae: m.mae,
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            f1: m.f1,
            detected_period: m.detected_period,
        });
    }
    Ok(rows)
}
