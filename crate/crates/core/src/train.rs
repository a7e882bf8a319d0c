//! Training schemes: self-supervised pretraining with a masked-reconstruction
//! companion loss, pretraining followed by task fine-tuning, and joint task
//! training with the frequency loss as an auxiliary term.

use std::time::Instant;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{backward_cached, encode_with_cache, init_encoder, EncoderConfig, EncoderParams, Linear};
use crate::error::{Error, Result};
use crate::floss::{floss_hierarchical, FlossConfig};
use crate::optim::{Adam, AdamConfig};
use crate::periodicity::detect_period_in;
use crate::spectral::SpectralTransform;
use crate::timeseries::{TimeSeriesTensor, Window};
use crate::views::{sample_view_pair_in, MaskMode, MaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    SelfSupervised,
    PretrainFinetune,
    Joint,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_supervised" | "self-supervised" => Ok(Scheme::SelfSupervised),
            "pretrain_finetune" | "pretrain-finetune" => Ok(Scheme::PretrainFinetune),
            "joint" => Ok(Scheme::Joint),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::SelfSupervised => "self_supervised",
            Scheme::PretrainFinetune => "pretrain_finetune",
            Scheme::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub scheme: Scheme,
    pub floss_weight: f64,
    /// Weight of the reconstruction loss (self-supervised phases) or the task
    /// loss (joint scheme).
    pub companion_weight: f64,
    /// View pairs per step, all drawn from one sampled wide window.
    pub batch_size: usize,
    pub window_length: usize,
    /// Length of the wide window on which the period is detected each step.
    pub detect_window: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Task-only epochs after pretraining in the `pretrain_finetune` scheme.
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mask_ratio: f64,
    /// Reconstruct unmasked timesteps too, so representations keep the
    /// current input instead of only predicting hidden ones.
    pub reconstruct_visible: bool,
    /// Forecast horizon used by the task loss.
    pub horizon: usize,
    pub detection_transform: SpectralTransform,
    /// Detect the period once over the whole training range instead of per
    /// step.
    pub freeze_period: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::SelfSupervised,
            floss_weight: 1.0,
            companion_weight: 1.0,
            batch_size: 8,
            window_length: 96,
            detect_window: 384,
            epochs: 10,
            steps_per_epoch: 20,
            finetune_epochs: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mask_ratio: 0.5,
            reconstruct_visible: true,
            horizon: 24,
            detection_transform: SpectralTransform::Dft,
            freeze_period: false,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Task weight 0.3 and frequency-loss weight 2, the forecasting preset
    /// reported for the Weather dataset.
    pub fn with_weather_weights(mut self) -> Self {
        self.companion_weight = 0.3;
        self.floss_weight = 2.0;
        self
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.floss_weight >= 0.0 && self.companion_weight >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        if self.floss_weight == 0.0 && self.companion_weight == 0.0 {
            return bad("at least one loss weight must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("batch_size, epochs and steps_per_epoch must be positive".into());
        }
        if self.window_length < 2 {
            return bad(format!("window_length {} < 2", self.window_length));
        }
        if self.detect_window < 4 {
            return bad(format!("detect_window {} < 4", self.detect_window));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1]", self.mask_ratio));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        Ok(())
    }
}

/// Encoder plus the heads trained alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: EncoderParams,
    /// Per-timestep `F′ → F` reconstruction head.
    pub decoder: Option<Linear>,
    /// Final-timestep `F′ → H·F` forecasting head, row layout `h·F + f`.
    pub forecast_head: Option<Linear>,
    pub horizon: usize,
}

impl Model {
    pub fn new(encoder: EncoderParams) -> Self {
        Self {
            encoder,
            decoder: None,
            forecast_head: None,
            horizon: 0,
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.encoder.data.clone();
        for lin in [&self.decoder, &self.forecast_head].into_iter().flatten() {
            out.extend_from_slice(&lin.weight);
            out.extend_from_slice(&lin.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let n = self.encoder.data.len();
        self.encoder.data.copy_from_slice(&flat[..n]);
        let mut off = n;
        for lin in [&mut self.decoder, &mut self.forecast_head].into_iter().flatten() {
            let w = lin.weight.len();
            lin.weight.copy_from_slice(&flat[off..off + w]);
            off += w;
            let b = lin.bias.len();
            lin.bias.copy_from_slice(&flat[off..off + b]);
            off += b;
        }
        assert_eq!(off, flat.len());
    }
}

/// What the companion term of a step measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Companion {
    /// Reconstruction of the original window from its masked copy through
    /// the decoder; `include_visible` also scores the unmasked timesteps.
    Reconstruction { include_visible: bool },
    /// Forecast MSE through the forecasting head.
    Task,
}

/// Inputs of one optimisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    /// `(rows, L, F)` raw original views.
    pub original: Array3<f64>,
    /// Periodically shifted views, when a shift was feasible.
    pub shifted: Option<Array3<f64>>,
    /// Per-row timestamp masks applied to both views before encoding.
    pub masks: Option<Vec<Vec<bool>>>,
    /// `(rows, H·F)` forecast targets.
    pub targets: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub floss: Option<f64>,
    pub companion: f64,
    pub total: f64,
}

fn masked_input(x: &Array3<f64>, masks: &Option<Vec<Vec<bool>>>) -> Array3<f64> {
    let mut out = x.clone();
    if let Some(masks) = masks {
        for (mut row, mask) in out.outer_iter_mut().zip(masks) {
            for (mut lane, &hidden) in row.outer_iter_mut().zip(mask) {
                if hidden {
                    lane.fill(0.0);
                }
            }
        }
    }
    out
}

/// Loss of one step and its gradient with respect to [`Model::flat_params`].
pub fn step_objective(
    model: &Model,
    batch: &StepBatch,
    companion: Companion,
    floss_weight: f64,
    companion_weight: f64,
    fcfg: &FlossConfig,
) -> Result<(StepLosses, Vec<f64>)> {
    let x_in = masked_input(&batch.original, &batch.masks);
    let (y, cache) = encode_with_cache(&model.encoder, x_in.view())?;
    let (rows, len, _) = y.dim();
    let n_features = batch.original.dim().2;
    let mut grad_y = Array3::<f64>::zeros(y.dim());

    let mut dec_grads = model
        .decoder
        .as_ref()
        .map(|d| (vec![0.0; d.weight.len()], vec![0.0; d.bias.len()]));
    let mut head_grads = model
        .forecast_head
        .as_ref()
        .map(|h| (vec![0.0; h.weight.len()], vec![0.0; h.bias.len()]));

    let companion_loss = if companion_weight == 0.0 {
        0.0
    } else {
        match companion {
            Companion::Reconstruction { include_visible } => {
                let dec = model
                    .decoder
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("reconstruction needs a decoder".into()))?;
                let (dw, db) = dec_grads.as_mut().expect("decoder grads");
                let any_masked = batch
                    .masks
                    .as_ref()
                    .is_some_and(|m| m.iter().flatten().any(|b| *b));
                let selected = |r: usize, t: usize| -> bool {
                    include_visible || !any_masked || batch.masks.as_ref().is_some_and(|m| m[r][t])
                };
                let count = (0..rows)
                    .flat_map(|r| (0..len).map(move |t| (r, t)))
                    .filter(|&(r, t)| selected(r, t))
                    .count()
                    * n_features;
                let scale = companion_weight / count as f64;
                let mut loss = 0.0;
                for r in 0..rows {
                    for t in 0..len {
                        if !selected(r, t) {
                            continue;
                        }
                        let rep = y.slice(s![r, t, ..]).to_vec();
                        let pred = dec.forward(&rep);
                        let mut gpred = vec![0.0; n_features];
                        for f in 0..n_features {
                            let e = pred[f] - batch.original[[r, t, f]];
                            loss += e * e;
                            gpred[f] = 2.0 * e * scale;
                        }
                        let grep = dec.backward(&rep, &gpred, dw, db);
                        for (k, g) in grep.into_iter().enumerate() {
                            grad_y[[r, t, k]] += g;
                        }
                    }
                }
                loss / count as f64
            }
            Companion::Task => {
                let head = model
                    .forecast_head
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("task loss needs a forecast head".into()))?;
                let targets = batch
                    .targets
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("task loss needs targets".into()))?;
                let (dw, db) = head_grads.as_mut().expect("head grads");
                let width = targets.dim().1;
                let scale = companion_weight / (rows * width) as f64;
                let mut loss = 0.0;
                for r in 0..rows {
                    let rep = y.slice(s![r, len - 1, ..]).to_vec();
                    let pred = head.forward(&rep);
                    let gpred: Vec<f64> = pred
                        .iter()
                        .zip(targets.row(r))
                        .map(|(p, t)| {
                            let e = p - t;
                            loss += e * e;
                            2.0 * e * scale
                        })
                        .collect();
                    let grep = head.backward(&rep, &gpred, dw, db);
                    for (k, g) in grep.into_iter().enumerate() {
                        grad_y[[r, len - 1, k]] += g;
                    }
                }
                loss / (rows * width) as f64
            }
        }
    };

    let mut param_grads: Vec<f64>;
    let mut floss_value = None;
    match (&batch.shifted, floss_weight > 0.0) {
        (Some(shifted), true) => {
            let xs_in = masked_input(shifted, &batch.masks);
            let (yhat, cache_hat) = encode_with_cache(&model.encoder, xs_in.view())?;
            let report = floss_hierarchical(y.view(), yhat.view(), fcfg)?;
            floss_value = Some(report.total);
            grad_y.scaled_add(floss_weight, &report.grad_y);
            let ghat = report.grad_yhat * floss_weight;
            param_grads = backward_cached(&model.encoder, &cache, grad_y.view())?.params;
            let extra = backward_cached(&model.encoder, &cache_hat, ghat.view())?.params;
            for (a, b) in param_grads.iter_mut().zip(extra) {
                *a += b;
            }
        }
        _ => {
            param_grads = backward_cached(&model.encoder, &cache, grad_y.view())?.params;
        }
    }
    for (dw, db) in [dec_grads, head_grads].into_iter().flatten() {
        param_grads.extend(dw);
        param_grads.extend(db);
    }
    let total = companion_weight * companion_loss + floss_weight * floss_value.unwrap_or(0.0);
    Ok((
        StepLosses {
            floss: floss_value,
            companion: companion_loss,
            total,
        },
        param_grads,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    /// Mean over steps where the frequency loss was computed.
    pub floss: Option<f64>,
    pub companion: f64,
    pub total: f64,
    /// Mean detected period over steps where one was found.
    pub mean_period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scheme: Scheme,
    pub epochs: Vec<EpochLosses>,
    pub finetune_epochs: Vec<EpochLosses>,
    /// Steps whose frequency term was skipped because no shifted view fit.
    pub skipped_batches: usize,
    /// Steps whose wide window had no dominant period.
    pub no_period_batches: usize,
    pub parameter_count: usize,
    pub wall_time_secs: f64,
}

struct Sampler<'a> {
    data: &'a TimeSeriesTensor,
    /// Range whose windows (and forecast targets) may be used.
    range: Window,
    cfg: &'a TrainingConfig,
    frozen_period: Option<Option<f64>>,
}

struct Sampled {
    batch: StepBatch,
    period: Option<f64>,
    shift_skipped: bool,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a TimeSeriesTensor, range: Window, cfg: &'a TrainingConfig) -> Result<Self> {
        let needed = cfg.window_length + cfg.horizon;
        if range.len() < needed {
            return Err(Error::DatasetTooShort(format!(
                "training range of {} steps cannot hold a {}-step window plus a {}-step horizon",
                range.len(),
                cfg.window_length,
                cfg.horizon
            )));
        }
        let frozen_period = if cfg.freeze_period {
            let view = data.window_view(range)?;
            Some(detect_period_in(view, cfg.detection_transform).ok().map(|e| e.period))
        } else {
            None
        };
        Ok(Self {
            data,
            range,
            cfg,
            frozen_period,
        })
    }

    fn sample(
        &self,
        rng: &mut ChaCha8Rng,
        companion: Companion,
        want_shifted: bool,
    ) -> Result<Sampled> {
        let cfg = self.cfg;
        let len = cfg.window_length;
        // every window, including its forecast targets, stays in range
        let usable_end = self.range.end - cfg.horizon;
        let usable = Window::new(self.range.start, usable_end)?;
        let wide_len = cfg.detect_window.max(len).min(usable.len());
        let wide_start = rng.random_range(usable.start..=usable.end + 1 - wide_len);
        let wide = Window::with_len(wide_start, wide_len)?;

        let period = match self.frozen_period {
            Some(p) => p,
            None => detect_period_in(self.data.window_view(wide)?, cfg.detection_transform)
                .ok()
                .map(|e| e.period),
        };

        let mut originals = Vec::with_capacity(cfg.batch_size);
        let mut shifts = Vec::with_capacity(cfg.batch_size);
        let mut shift_skipped = false;
        for _ in 0..cfg.batch_size {
            let pair = match period {
                Some(p) => match sample_view_pair_in(wide, len, p, rng) {
                    Ok(pair) => Some(pair),
                    Err(Error::NoFeasibleShift { .. }) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            match pair {
                Some(pair) => {
                    originals.push(pair.original);
                    shifts.push(Some(pair.shifted));
                }
                None => {
                    let start = rng.random_range(wide.start..=wide.end + 1 - len);
                    originals.push(Window::with_len(start, len)?);
                    shifts.push(None);
                    shift_skipped |= period.is_some();
                }
            }
        }

        let n = self.data.n_series();
        let f = self.data.n_features();
        let gather = |windows: &[Window]| -> Result<Array3<f64>> {
            let parts: Vec<ArrayView3<'_, f64>> = windows
                .iter()
                .map(|w| self.data.window_view(*w))
                .collect::<Result<_>>()?;
            ndarray::concatenate(Axis(0), &parts)
                .map_err(|e| Error::MismatchedShapes(e.to_string()))
        };
        let original = gather(&originals)?;
        let all_shifted: Option<Vec<Window>> = shifts.iter().copied().collect();
        let shifted = match (want_shifted, all_shifted) {
            (true, Some(ws)) => Some(gather(&ws)?),
            _ => None,
        };

        let (masks, targets) = match companion {
            Companion::Reconstruction { .. } => {
                let mut masks = Vec::with_capacity(cfg.batch_size * n);
                for _ in 0..cfg.batch_size {
                    let spec = MaskSpec {
                        mask_ratio: cfg.mask_ratio,
                        mode: MaskMode::RandomTimestamps,
                        seed: rng.next_u64(),
                    };
                    let m = spec.indicator(len)?;
                    masks.extend(std::iter::repeat_n(m, n));
                }
                (Some(masks), None)
            }
            Companion::Task => {
                let h = cfg.horizon;
                let mut targets = Array2::zeros((cfg.batch_size * n, h * f));
                for (b, w) in originals.iter().enumerate() {
                    for s_idx in 0..n {
                        for k in 0..h {
                            for fi in 0..f {
                                targets[[b * n + s_idx, k * f + fi]] =
                                    self.data.values()[[s_idx, w.end + 1 + k, fi]];
                            }
                        }
                    }
                }
                (None, Some(targets))
            }
        };

        Ok(Sampled {
            batch: StepBatch {
                original,
                shifted,
                masks,
                targets,
            },
            period,
            shift_skipped,
        })
    }
}

struct PhaseOutcome {
    epochs: Vec<EpochLosses>,
    skipped: usize,
    no_period: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut Model,
    sampler: &Sampler<'_>,
    rng: &mut ChaCha8Rng,
    epochs: usize,
    companion: Companion,
    floss_weight: f64,
    companion_weight: f64,
    fcfg: &FlossConfig,
) -> Result<PhaseOutcome> {
    let cfg = sampler.cfg;
    let mut params = model.flat_params();
    let mut adam = Adam::new(cfg.adam(), params.len());
    let mut out = PhaseOutcome {
        epochs: Vec::with_capacity(epochs),
        skipped: 0,
        no_period: 0,
    };
    for epoch in 0..epochs {
        let (mut fl_sum, mut fl_n, mut comp_sum, mut tot_sum) = (0.0, 0usize, 0.0, 0.0);
        let (mut p_sum, mut p_n) = (0.0, 0usize);
        for _ in 0..cfg.steps_per_epoch {
            let sampled = sampler.sample(rng, companion, floss_weight > 0.0)?;
            match sampled.period {
                Some(p) => {
                    p_sum += p;
                    p_n += 1;
                }
                None => {
                    out.no_period += 1;
                    if floss_weight > 0.0 {
                        log::debug!("epoch {epoch}: no dominant period, frequency term skipped");
                    }
                }
            }
            if sampled.shift_skipped {
                out.skipped += 1;
                if floss_weight > 0.0 {
                    log::info!("epoch {epoch}: no feasible periodic shift, frequency term skipped");
                }
            }
            let (losses, grads) = step_objective(
                model,
                &sampled.batch,
                companion,
                floss_weight,
                companion_weight,
                fcfg,
            )?;
            if !losses.total.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "training diverged at epoch {epoch} (loss {})",
                    losses.total
                )));
            }
            adam.update(&mut params, &grads);
            model.set_flat_params(&params);
            if let Some(f) = losses.floss {
                fl_sum += f;
                fl_n += 1;
            }
            comp_sum += losses.companion;
            tot_sum += losses.total;
        }
        let steps = cfg.steps_per_epoch as f64;
        out.epochs.push(EpochLosses {
            epoch,
            floss: (fl_n > 0).then(|| fl_sum / fl_n as f64),
            companion: comp_sum / steps,
            total: tot_sum / steps,
            mean_period: (p_n > 0).then(|| p_sum / p_n as f64),
        });
    }
    Ok(out)
}

const DECODER_SEED_SALT: u64 = 0x5eed_dec0;
const HEAD_SEED_SALT: u64 = 0x5eed_4ead;

/// Trains a model on `data` restricted to `range` (normally the training
/// split).
pub fn train(
    data: &TimeSeriesTensor,
    range: Window,
    encoder_cfg: &EncoderConfig,
    cfg: &TrainingConfig,
    fcfg: &FlossConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    fcfg.validate()?;
    range.check_within(data.n_time())?;
    if encoder_cfg.input_features != data.n_features() {
        return Err(Error::MismatchedShapes(format!(
            "encoder expects {} features, data has {}",
            encoder_cfg.input_features,
            data.n_features()
        )));
    }
    if encoder_cfg.receptive_field() > cfg.window_length {
        log::warn!(
            "encoder receptive field {} exceeds window length {}",
            encoder_cfg.receptive_field(),
            cfg.window_length
        );
    }
    let started = Instant::now();
    let sampler = Sampler::new(data, range, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(init_encoder(encoder_cfg)?);
    let fo = encoder_cfg.repr_features;
    let f = data.n_features();
    let new_head = || Linear::init(cfg.horizon * f, fo, cfg.seed ^ HEAD_SEED_SALT);

    let (epochs, finetune, skipped, no_period) = match cfg.scheme {
        Scheme::SelfSupervised | Scheme::PretrainFinetune => {
            model.decoder = Some(Linear::init(f, fo, cfg.seed ^ DECODER_SEED_SALT));
            let pre = run_phase(
                &mut model,
                &sampler,
                &mut rng,
                cfg.epochs,
                Companion::Reconstruction {
                    include_visible: cfg.reconstruct_visible,
                },
                cfg.floss_weight,
                cfg.companion_weight,
                fcfg,
            )?;
            let mut finetune = Vec::new();
            if cfg.scheme == Scheme::PretrainFinetune && cfg.finetune_epochs > 0 {
                model.decoder = None;
                model.forecast_head = Some(new_head());
                model.horizon = cfg.horizon;
                finetune = run_phase(
                    &mut model,
                    &sampler,
                    &mut rng,
                    cfg.finetune_epochs,
                    Companion::Task,
                    0.0,
                    1.0,
                    fcfg,
                )?
                .epochs;
            }
            (pre.epochs, finetune, pre.skipped, pre.no_period)
        }
        Scheme::Joint => {
            model.forecast_head = Some(new_head());
            model.horizon = cfg.horizon;
            let out = run_phase(
                &mut model,
                &sampler,
                &mut rng,
                cfg.epochs,
                Companion::Task,
                cfg.floss_weight,
                cfg.companion_weight,
                fcfg,
            )?;
            (out.epochs, Vec::new(), out.skipped, out.no_period)
        }
    };

    let report = TrainReport {
        scheme: cfg.scheme,
        epochs,
        finetune_epochs: finetune,
        skipped_batches: skipped,
        no_period_batches: no_period,
        parameter_count: model.encoder.parameter_count(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode;
    use crate::timeseries::{synthesize, SynthSpec};

    fn tiny_encoder(features: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_features: features,
            repr_features: 4,
            hidden: 4,
            n_blocks: 1,
            kernel: 3,
            seed,
        }
    }

    fn fixture(noise: f64, length: usize) -> TimeSeriesTensor {
        let mut spec = SynthSpec::periodic(&[12.0], length);
        spec.n_series = 2;
        spec.noise_std = noise;
        spec.seed = 3;
        synthesize(&spec).unwrap()
    }

    fn quick_cfg(scheme: Scheme) -> TrainingConfig {
        TrainingConfig {
            scheme,
            batch_size: 2,
            window_length: 24,
            detect_window: 96,
            epochs: 3,
            steps_per_epoch: 4,
            finetune_epochs: 2,
            horizon: 6,
            learning_rate: 5e-3,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainingConfig::default();
        cfg.floss_weight = 0.0;
        cfg.companion_weight = 0.0;
        assert!(cfg.validate().is_err());
        cfg.companion_weight = -1.0;
        assert!(cfg.validate().is_err());
        let w = TrainingConfig::default().with_weather_weights();
        assert_eq!((w.companion_weight, w.floss_weight), (0.3, 2.0));
    }

    #[test]
    fn dataset_too_short() {
        let data = fixture(0.0, 28);
        let err = train(&data, data.full_window(), &tiny_encoder(1, 0), &quick_cfg(Scheme::Joint), &FlossConfig::default());
        assert!(matches!(err, Err(Error::DatasetTooShort(_))));
    }

    #[test]
    fn every_scheme_runs_and_is_deterministic() {
        let data = fixture(0.1, 300);
        for scheme in [Scheme::SelfSupervised, Scheme::PretrainFinetune, Scheme::Joint] {
            let cfg = quick_cfg(scheme);
            let run = || train(&data, data.full_window(), &tiny_encoder(1, 1), &cfg, &FlossConfig::default()).unwrap();
            let (m1, r1) = run();
            let (m2, r2) = run();
            assert_eq!(m1, m2);
            assert_eq!(r1.epochs, r2.epochs);
            assert_eq!(r1.epochs.len(), cfg.epochs);
            assert!(r1.epochs.iter().all(|e| e.total.is_finite() && e.floss.is_some()));
            assert_eq!(r1.finetune_epochs.len(), if scheme == Scheme::PretrainFinetune { 2 } else { 0 });
            assert_eq!(m1.forecast_head.is_some(), scheme != Scheme::SelfSupervised);
        }
    }

    #[test]
    fn zero_floss_weight_matches_baseline() {
        let data = fixture(0.2, 300);
        let mut cfg = quick_cfg(Scheme::Joint);
        cfg.floss_weight = 0.0;
        let a = train(&data, data.full_window(), &tiny_encoder(1, 2), &cfg, &FlossConfig::default()).unwrap();
        let other = FlossConfig { transform: SpectralTransform::Dft, pooling_scale: 3, ..Default::default() };
        let b = train(&data, data.full_window(), &tiny_encoder(1, 2), &cfg, &other).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.epochs, b.1.epochs);
        assert!(a.1.epochs.iter().all(|e| e.floss.is_none() && e.total == e.companion * 1.0));
    }

    #[test]
    fn infeasible_shift_is_skipped_not_fatal() {
        // period 40 in a 48-step wide window leaves no room for a shifted 24-step view
        let mut spec = SynthSpec::periodic(&[40.0], 300);
        spec.noise_std = 0.05;
        let data = synthesize(&spec).unwrap();
        let mut cfg = quick_cfg(Scheme::SelfSupervised);
        cfg.detect_window = 48;
        let (_, report) = train(&data, data.full_window(), &tiny_encoder(1, 0), &cfg, &FlossConfig::default()).unwrap();
        assert!(report.skipped_batches > 0);
    }

    #[test]
    fn pure_periodic_fixture_floss_vanishes() {
        let data = fixture(0.0, 400);
        let mut cfg = quick_cfg(Scheme::SelfSupervised);
        cfg.epochs = 5;
        let (_, report) = train(&data, data.full_window(), &tiny_encoder(1, 4), &cfg, &FlossConfig::default()).unwrap();
        assert!(report.epochs.iter().all(|e| e.floss.unwrap() < 1e-3));
    }

    #[test]
    fn reconstruction_prevents_collapse() {
        let data = fixture(0.1, 400);
        let mut cfg = quick_cfg(Scheme::SelfSupervised);
        cfg.epochs = 5;
        let (model, _) = train(&data, Window::new(0, 299).unwrap(), &tiny_encoder(1, 5), &cfg, &FlossConfig::default()).unwrap();
        let val = data.window_view(Window::new(300, 399).unwrap()).unwrap();
        let y = encode(&model.encoder, val).unwrap();
        for n in 0..y.dim().0 {
            for f in 0..y.dim().2 {
                let lane = y.slice(s![n, .., f]);
                let mean = lane.mean().unwrap();
                let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / lane.len() as f64;
                assert!(var > 1e-6, "series {n} feature {f} collapsed: {var}");
            }
        }
    }

    /// Central differences of the step objective over every parameter.
    pub(crate) fn pipeline_fd_max_rel_err(companion: Companion, fcfg: &FlossConfig) -> f64 {
        let data = fixture(0.3, 200);
        let enc = tiny_encoder(1, 7);
        let mut model = Model::new(init_encoder(&enc).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        model.encoder.data.iter_mut().for_each(|v| *v = rng.random_range(-0.7..0.7));
        match companion {
            Companion::Reconstruction { .. } => model.decoder = Some(Linear::init(1, 4, 3)),
            Companion::Task => model.forecast_head = Some(Linear::init(6, 4, 3)),
        }
        let cfg = TrainingConfig { window_length: 12, batch_size: 2, detect_window: 60, horizon: 6, ..Default::default() };
        let sampler = Sampler::new(&data, data.full_window(), &cfg).unwrap();
        let batch = sampler.sample(&mut rng, companion, true).unwrap().batch;
        assert!(batch.shifted.is_some());
        let (_, grads) = step_objective(&model, &batch, companion, 0.7, 1.3, fcfg).unwrap();
        let base = model.flat_params();
        let loss_at = |p: &[f64]| {
            let mut m = model.clone();
            m.set_flat_params(p);
            step_objective(&m, &batch, companion, 0.7, 1.3, fcfg).unwrap().0.total
        };
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let (mut pp, mut pm) = (base.clone(), base.clone());
            pp[i] += h;
            pm[i] -= h;
            let fd = (loss_at(&pp) - loss_at(&pm)) / (2.0 * h);
            let g = grads[i];
            if g.abs() > 1e-6 {
                worst = worst.max((fd - g).abs() / g.abs());
            }
        }
        worst
    }

    #[test]
    fn full_pipeline_gradient() {
        for companion in [
            Companion::Reconstruction { include_visible: false },
            Companion::Reconstruction { include_visible: true },
            Companion::Task,
        ] {
            for transform in [SpectralTransform::Dft, SpectralTransform::Dct] {
                let fcfg = FlossConfig { transform, ..Default::default() };
                let err = pipeline_fd_max_rel_err(companion, &fcfg);
                assert!(err < 1e-3, "{companion:?} {transform:?}: {err}");
            }
        }
    }
}
