//! RMSProp, the learning-rate schedule and the training loop.

use std::io::Write;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataio::{derive_seed, make_batches, DatasetManifest, FeatureStore, Split};
use crate::diffmath::{Matrix, Mode, Parameter};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalOptions, EvalReport};
use crate::fusion::{assemble_pair_batch, FusionModel};
use crate::objective::{combined_loss, single_loss, BatchSimilarities, LossMode};

/// Which validation signal drives checkpointing, plateau halving and
/// early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    #[default]
    MeanAp,
    SumRecalls,
}

/// Every knob of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_decay")]
    pub per_epoch_decay: f64,
    #[serde(default = "default_plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "default_early_stop")]
    pub early_stop_patience: usize,
    #[serde(default = "default_rho")]
    pub rmsprop_rho: f64,
    #[serde(default = "default_eps")]
    pub rmsprop_eps: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub validation_metric: ValidationMetric,
    #[serde(default)]
    pub loss_mode: LossMode,
    /// Include wall-clock timings in the log records. Off by default so
    /// identical runs produce identical logs.
    #[serde(default)]
    pub log_timings: bool,
}

fn default_margin() -> f64 {
    0.2
}
fn default_batch_size() -> usize {
    128
}
fn default_base_lr() -> f64 {
    1e-4
}
fn default_decay() -> f64 {
    0.99
}
fn default_plateau_patience() -> usize {
    3
}
fn default_plateau_factor() -> f64 {
    0.5
}
fn default_early_stop() -> usize {
    10
}
fn default_rho() -> f64 {
    0.99
}
fn default_eps() -> f64 {
    1e-8
}
fn default_max_epochs() -> usize {
    30
}
fn default_seed() -> u64 {
    42
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (mining needs a negative)".into(),
            ));
        }
        for (name, v) in [
            ("base_lr", self.base_lr),
            ("per_epoch_decay", self.per_epoch_decay),
            ("plateau_factor", self.plateau_factor),
            ("rmsprop_rho", self.rmsprop_rho),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if self.rmsprop_eps <= 0.0 {
            return Err(Error::Config("rmsprop_eps must be positive".into()));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patiences must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-parameter running mean of squared gradients.
pub struct RmspropState {
    v: Vec<Matrix>,
}

impl RmspropState {
    pub fn new(model: &FusionModel) -> Self {
        let mut v = Vec::new();
        model.for_each_param(&mut |p| v.push(Matrix::zeros(p.value.rows(), p.value.cols())));
        RmspropState { v }
    }
}

/// One RMSProp update of a single parameter:
/// `v ← ρ·v + (1−ρ)·g²`, `θ ← θ − lr·g/(√v + ε)`.
pub fn rmsprop_param_step(
    param: &mut Parameter,
    v: &mut Matrix,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if !param.grad.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in {}; aborting the step",
            param.name
        )));
    }
    for ((value, &g), acc) in param
        .value
        .data_mut()
        .iter_mut()
        .zip(param.grad.data())
        .zip(v.data_mut())
    {
        *acc = rho * *acc + (1.0 - rho) * g * g;
        *value -= lr * g / (acc.sqrt() + eps);
    }
    Ok(())
}

/// Apply one RMSProp step to every parameter of the model.
pub fn rmsprop_step(
    model: &mut FusionModel,
    state: &mut RmspropState,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    let mut error = None;
    let mut idx = 0;
    let v = &mut state.v;
    model.for_each_param_mut(&mut |p| {
        if error.is_some() {
            return;
        }
        if let Err(e) = rmsprop_param_step(p, &mut v[idx], lr, rho, eps) {
            error = Some(e);
        }
        idx += 1;
    });
    match error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Number of trailing epochs without a strict improvement over the best
/// validation value seen before them. The first epoch establishes the
/// baseline and is never itself an improvement event.
pub fn stagnation_streak(val_history: &[f64]) -> usize {
    if val_history.is_empty() {
        return 0;
    }
    let mut best = val_history[0];
    let mut last_improvement = None;
    for (e, &v) in val_history.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            last_improvement = Some(e);
        }
    }
    match last_improvement {
        Some(e) => val_history.len() - 1 - e,
        None => val_history.len(),
    }
}

/// Learning rate for the next epoch and whether to stop.
///
/// The rate always decays by `per_epoch_decay`; each time the stagnation
/// streak reaches a full multiple of `plateau_patience` it is additionally
/// multiplied by `plateau_factor` (both compose in the same epoch). Stop
/// fires once `early_stop_patience` consecutive epochs saw no improvement.
pub fn schedule_step(val_history: &[f64], current_lr: f64, cfg: &TrainConfig) -> (f64, bool) {
    let streak = stagnation_streak(val_history);
    let mut lr = current_lr * cfg.per_epoch_decay;
    if streak > 0 && streak % cfg.plateau_patience == 0 {
        lr *= cfg.plateau_factor;
    }
    (lr, streak >= cfg.early_stop_patience)
}

/// Attention-weight vectors captured from the first training batch of an
/// epoch, per space (rows = samples, columns = features).
#[derive(Debug, Clone)]
pub struct WeightSample {
    pub video: Vec<Matrix>,
    pub text: Vec<Matrix>,
}

/// Validation metrics logged per epoch.
#[derive(Debug, Clone, Serialize)]
pub struct ValSummary {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub med_r: usize,
    pub map: f64,
}

impl From<&EvalReport> for ValSummary {
    fn from(r: &EvalReport) -> Self {
        ValSummary {
            r1: r.r1,
            r5: r.r5,
            r10: r.r10,
            med_r: r.med_r,
            map: r.map,
        }
    }
}

/// One epoch of the training log. Serialized as one JSON line.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: ValSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
    #[serde(skip_serializing)]
    pub weight_sample: Option<WeightSample>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

/// Result of a training run: the best checkpoint by validation metric,
/// its metric value, and the per-epoch log.
pub struct FitOutcome {
    pub best: FusionModel,
    pub best_metric: f64,
    pub log: TrainingLog,
}

fn metric_value(report: &EvalReport, metric: ValidationMetric) -> f64 {
    match metric {
        ValidationMetric::MeanAp => report.map,
        ValidationMetric::SumRecalls => report.sum_recalls(),
    }
}

/// Train the model: per epoch, a seeded shuffle into batches, forward,
/// per-space hard-negative loss, backward, RMSProp; validate, keep the
/// best checkpoint, decay/halve the rate, stop early on a long plateau.
/// Epoch records stream to `log_sink` as JSON lines while training runs.
pub fn fit(
    model: FusionModel,
    store: &FeatureStore,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    model.config.validate()?;
    manifest.validate()?;
    manifest.validate_against(store)?;

    let mut model = model;
    let mut best = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut lr = cfg.base_lr;
    let mut state = RmspropState::new(&model);
    let mut dropout_rng = StdRng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut val_history = Vec::new();
    let mut log = TrainingLog::default();

    let val_opts = EvalOptions {
        split: Split::Val,
        ..EvalOptions::default()
    };

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let batches = make_batches(manifest, Split::Train, cfg.batch_size, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut weight_sample = None;
        for (bi, batch) in batches.iter().enumerate() {
            let inputs = assemble_pair_batch(store, &model.config, batch)?;
            model.zero_grads();
            let fwd = model.forward_batch(&inputs, Mode::Train, &mut dropout_rng)?;
            let sims = BatchSimilarities::from_forward(&fwd)?;
            let (report, grads_s) = match cfg.loss_mode {
                LossMode::Combined => combined_loss(&sims, cfg.margin)?,
                LossMode::Single => single_loss(&sims, cfg.margin)?,
            };
            if !report.combined.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}: loss {}",
                    report.combined
                )));
            }
            let mut grad_text = Vec::with_capacity(grads_s.len());
            let mut grad_video = Vec::with_capacity(grads_s.len());
            for (i, g) in grads_s.iter().enumerate() {
                grad_text.push(g.matmul(&fwd.video_embeddings[i])?);
                grad_video.push(g.matmul_transpose_a(&fwd.text_embeddings[i])?);
            }
            model.backward_batch(&fwd, &inputs, &grad_video, &grad_text)?;
            rmsprop_step(&mut model, &mut state, lr, cfg.rmsprop_rho, cfg.rmsprop_eps)?;
            loss_sum += report.combined;
            if bi == 0 && !fwd.video_weights.is_empty() {
                weight_sample = Some(WeightSample {
                    video: fwd.video_weights.clone(),
                    text: fwd.text_weights.clone(),
                });
            }
        }

        let val_report = evaluate(&model, store, manifest, &val_opts, 1)?;
        let metric = metric_value(&val_report, cfg.validation_metric);
        val_history.push(metric);
        if metric > best_metric {
            best_metric = metric;
            best = model.clone();
        }

        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches.len() as f64,
            val: ValSummary::from(&val_report),
            wall_ms: cfg
                .log_timings
                .then(|| started.elapsed().as_millis() as u64),
            weight_sample,
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            serde_json::to_writer(&mut *sink, &record)?;
            writeln!(sink)?;
        }
        log.epochs.push(record);

        let (next_lr, stop) = schedule_step(&val_history, lr, cfg);
        lr = next_lr;
        if stop {
            break;
        }
    }

    if cfg.max_epochs == 0 {
        best_metric = f64::NAN;
    }
    Ok(FitOutcome {
        best,
        best_metric,
        log,
    })
}
