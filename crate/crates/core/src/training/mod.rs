//! Adam training loop with cross-entropy loss, per-epoch evaluation, and
//! metrics persistence.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use metrics::{
    read_metrics_csv, window_means, write_metrics_csv, write_metrics_jsonl, write_steps_csv,
    MetricsRecord, StepRecord,
};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, Model};
use crate::tensor::{Graph, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!(
                "precision must be f32 or f64, got {s:?}"
            ))),
        }
    }
}

fn default_eval_batch() -> usize {
    500
}

fn default_true() -> bool {
    true
}

/// Optimization settings. Schedule, decay and clipping default to off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default)]
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Linear warmup length in optimizer steps.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Cosine decay of the rate to zero over the whole run.
    #[serde(default)]
    pub cosine_schedule: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
            shuffle: true,
            eval_batch_size: default_eval_batch(),
            weight_decay: 0.0,
            grad_clip: None,
            warmup_steps: 0,
            cosine_schedule: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            bad.push(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                bad.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            bad.push("adam_eps must be positive".into());
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            bad.push("batch sizes must be at least 1".into());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            bad.push("weight_decay must be non-negative".into());
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            bad.push("grad_clip must be positive when set".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Rate for optimizer step `step` (0-based) of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let mut lr = self.learning_rate;
        if step < self.warmup_steps {
            lr *= (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.cosine_schedule && total > 0 {
            let progress = step as f64 / total as f64;
            lr *= 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        lr
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Summed loss and correct count of one batch of logits.
fn batch_stats<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (f64, usize) {
    let c = logits.shape()[1];
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let max = row
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = row
            .iter()
            .map(|v| (v.to_f64() - max).exp())
            .sum::<f64>()
            .ln()
            + max;
        loss += lse - row[y].to_f64();
    }
    let correct = argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    (loss, correct)
}

/// Mean cross-entropy and accuracy on a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub n_samples: usize,
}

/// Full pass without a tape. Loss sums are accumulated in 64-bit, so the
/// result does not depend on `batch_size` beyond rounding.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    ds: &LabeledDataset,
    batch_size: usize,
) -> Result<EvalResult> {
    let mut loss = 0.0;
    let mut correct = 0;
    for idx in batches(ds.len(), batch_size, 0, 0, false)? {
        let (x, y) = ds.gather::<T>(&idx);
        let logits = model.logits(&x)?;
        let (l, c) = batch_stats(&logits, &y);
        loss += l;
        correct += c;
    }
    let n = ds.len().max(1) as f64;
    Ok(EvalResult {
        loss: loss / n,
        accuracy: correct as f64 / n,
        n_samples: ds.len(),
    })
}

/// Everything a run produced besides the trained parameters.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainReport {
    pub fn step_losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

fn clip_global_norm<T: Scalar>(grads: &mut indexmap::IndexMap<String, Tensor<T>>, max_norm: f64) {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter().map(|v| v.to_f64() * v.to_f64()))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v = T::from_f64(v.to_f64() * s);
            }
        }
    }
}

/// Trains `model` in place. `on_epoch` sees each record as soon as it is
/// complete. Training is deterministic for a fixed config on one thread.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if train_ds.n_classes() != model.config.n_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model head has {}",
            train_ds.n_classes(),
            model.config.n_classes
        )));
    }
    let start = Instant::now();
    let mut state = AdamState::new(&model.params);
    let per_epoch = train_ds.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in batches(
            train_ds.len(),
            cfg.batch_size,
            cfg.seed,
            epoch as u64,
            cfg.shuffle,
        )?
        .enumerate()
        {
            let (x, y) = train_ds.gather::<T>(&idx);
            let g = Graph::new();
            let p = model.bind(&g)?;
            let non_finite = |e: Error| match e {
                Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                },
                e => e,
            };
            let logits = model
                .forward_classify(&p, g.constant(x))
                .map_err(non_finite)?;
            let loss = logits.cross_entropy(&y).map_err(|e| non_finite(e.into()))?;
            let lv = loss.value().data()[0].to_f64();
            if !lv.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: lv,
                });
            }
            let (_, c) = batch_stats(&logits.value(), &y);
            loss_sum += lv * idx.len() as f64;
            correct += c;
            let grads = g.backward(loss)?;
            let mut grads = p.bound.gradients(&grads);
            drop(p);
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut grads, max);
            }
            let step = report.steps.len();
            adam_step(
                &mut model.params,
                &grads,
                &mut state,
                &cfg.hyper(cfg.lr_at(step, total)),
            )?;
            report.steps.push(StepRecord {
                step,
                epoch,
                batch: b,
                loss: lv,
            });
        }
        let test = evaluate(model, test_ds, cfg.eval_batch_size)?;
        let rec = MetricsRecord {
            epoch,
            train_loss: loss_sum / train_ds.len() as f64,
            train_acc: correct as f64 / train_ds.len() as f64,
            test_loss: test.loss,
            test_acc: test.accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        report.records.push(rec);
    }
    Ok(report)
}
