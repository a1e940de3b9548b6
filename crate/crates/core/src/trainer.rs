//! Mini-batch SGD on the model shift, with per-epoch group metrics.
//!
//! The learning rate follows a per-epoch cosine schedule
//! `lr0 * (1 + cos(pi * t / epochs)) / 2`. Batch gradients are means over
//! the batch, reduced in ascending sample-index order, so a run is
//! bit-reproducible from its seed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::losses::{dspt_loss_bounds, LossKind};
use crate::model::{PrototypeModel, ShiftMode, DEFAULT_SCALE};
use crate::noise::NoiseSpec;
use crate::numerics::{argmax, argmax_set};

pub const DEFAULT_EPOCHS: usize = 50;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_LR: f64 = 0.002;

/// Slack on the online double-softmax loss bound check.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: ShiftMode,
    pub scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ShiftMode::Shared,
            scale: DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub model: ModelConfig,
    /// Drop, for the whole epoch, samples whose epoch-start prediction
    /// disagrees with their label.
    pub selection: bool,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        Self {
            loss,
            epochs: DEFAULT_EPOCHS,
            batch: DEFAULT_BATCH,
            lr0: DEFAULT_LR,
            seed: 0,
            noise: NoiseSpec::none(),
            model: ModelConfig::default(),
            selection: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(self.model.scale > 0.0 && self.model.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive, got {}",
                self.model.scale
            )));
        }
        Ok(())
    }

    pub fn uses_selection(&self) -> bool {
        self.selection || self.loss.selects()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(self.lr0, epoch, self.epochs)
    }
}

pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    lr0 * (1.0 + (PI * epoch as f64 / epochs as f64).cos()) / 2.0
}

/// One row per epoch. Group means are `None` when the group is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub test_acc: f64,
    pub clean_loss_mean: Option<f64>,
    pub noisy_loss_mean: Option<f64>,
    pub clean_grad_l1_mean: Option<f64>,
    pub noisy_grad_l1_mean: Option<f64>,
    pub lr: f64,
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "epoch",
    "test_acc",
    "clean_loss_mean",
    "noisy_loss_mean",
    "clean_grad_l1_mean",
    "noisy_grad_l1_mean",
    "lr",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub loss: String,
    pub rows: Vec<EpochMetrics>,
    /// Mean test accuracy over the last five epochs.
    pub final_acc: f64,
    /// Test accuracy before any update.
    pub zero_shot_acc: f64,
    /// Samples kept by selection in each epoch (empty without selection).
    pub selected: Vec<usize>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = METRICS_COLUMNS.join(",");
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.test_acc,
                opt(r.clean_loss_mean),
                opt(r.noisy_loss_mean),
                opt(r.clean_grad_l1_mean),
                opt(r.noisy_grad_l1_mean),
                r.lr
            ));
        }
        out
    }
}

#[derive(Default)]
struct GroupMeans {
    loss: [f64; 2],
    grad: [f64; 2],
    count: [usize; 2],
}

impl GroupMeans {
    fn add(&mut self, noisy: bool, loss: f64, grad_l1: f64) {
        let g = noisy as usize;
        self.loss[g] += loss;
        self.grad[g] += grad_l1;
        self.count[g] += 1;
    }

    fn mean(&self, sums: &[f64; 2], noisy: bool) -> Option<f64> {
        let g = noisy as usize;
        (self.count[g] > 0).then(|| sums[g] / self.count[g] as f64)
    }
}

fn check_dims(model: &PrototypeModel, ds: &Dataset) -> Result<()> {
    if model.classes() != ds.classes() || model.dim() != ds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model is {}x{}, dataset is {}x{}",
            model.classes(),
            model.dim(),
            ds.classes(),
            ds.dim()
        )));
    }
    Ok(())
}

/// Fraction of test rows whose argmax (lowest index on ties) matches the
/// clean label.
pub fn evaluate(model: &PrototypeModel, test: &Dataset) -> Result<f64> {
    check_dims(model, test)?;
    if test.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on an empty test set".into()));
    }
    let emb = model.embeddings()?;
    let mut z = vec![0.0; model.classes()];
    let mut correct = 0usize;
    for (i, &y) in test.clean().iter().enumerate() {
        emb.logits_into(test.row(i), &mut z);
        correct += (argmax(&z) == y) as usize;
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Zero-shot accuracy of the anchors on clean labels.
pub fn zero_shot_accuracy(model: &PrototypeModel, ds: &Dataset) -> Result<f64> {
    check_dims(model, ds)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on an empty set".into()));
    }
    let emb = model.zero_shot_embeddings();
    let correct = ds
        .clean()
        .iter()
        .enumerate()
        .filter(|(i, &y)| argmax(&emb.logits(ds.row(*i))) == y)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Trains `model` in place on the noisy labels of `train`.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    model: &mut PrototypeModel,
) -> Result<MetricsLog> {
    config.validate()?;
    check_dims(model, train_set)?;
    check_dims(model, test_set)?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    let zero_shot_acc = evaluate(model, test_set)?;
    let classes = model.classes();
    let (lo, hi) = dspt_loss_bounds(classes);
    let selection = config.uses_selection();
    let mut rows = Vec::with_capacity(config.epochs);
    let mut selected = Vec::new();
    let mut z = vec![0.0; classes];
    let mut grad = vec![0.0; model.shift().len()];

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let keep: Option<Vec<bool>> = if selection {
            let emb = model.embeddings()?;
            let keep: Vec<bool> = (0..train_set.len())
                .map(|i| {
                    emb.logits_into(train_set.row(i), &mut z);
                    argmax_set(&z).contains(&train_set.noisy()[i])
                })
                .collect();
            selected.push(keep.iter().filter(|k| **k).count());
            Some(keep)
        } else {
            None
        };

        let mut groups = GroupMeans::default();
        for mut batch in batches(train_set.len(), config.batch, config.seed, epoch)? {
            batch.sort_unstable();
            let emb = model.embeddings()?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut used = 0usize;
            for &i in &batch {
                let x = train_set.row(i);
                let y = train_set.noisy()[i];
                emb.logits_into(x, &mut z);
                let ev = config.loss.eval_unchecked(&z, y);
                if !ev.value.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NumericAbort {
                        epoch,
                        index: i,
                        reason: format!("non-finite loss {} for logits {z:?}", ev.value),
                    });
                }
                if config.loss == LossKind::Dspt && !(lo - BOUND_SLACK..=hi + BOUND_SLACK).contains(&ev.value) {
                    return Err(Error::NumericAbort {
                        epoch,
                        index: i,
                        reason: format!("double-softmax loss {} outside [{lo}, {hi}]", ev.value),
                    });
                }
                groups.add(train_set.mask()[i], ev.value, ev.grad_l1());
                if keep.as_ref().is_some_and(|k| !k[i]) {
                    continue;
                }
                emb.accumulate_backward(x, &ev.grad, 1.0, &mut grad);
                used += 1;
            }
            if used > 0 {
                let inv = 1.0 / used as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                model.apply_update(&grad, lr);
                if model.shift().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NumericAbort {
                        epoch,
                        index: batch[0],
                        reason: "parameters became non-finite after an update".into(),
                    });
                }
            }
        }

        rows.push(EpochMetrics {
            epoch,
            test_acc: evaluate(model, test_set)?,
            clean_loss_mean: groups.mean(&groups.loss, false),
            noisy_loss_mean: groups.mean(&groups.loss, true),
            clean_grad_l1_mean: groups.mean(&groups.grad, false),
            noisy_grad_l1_mean: groups.mean(&groups.grad, true),
            lr,
        });
    }

    let tail = &rows[rows.len().saturating_sub(5)..];
    let final_acc = tail.iter().map(|r| r.test_acc).sum::<f64>() / tail.len() as f64;
    Ok(MetricsLog {
        loss: config.loss.to_string(),
        rows,
        final_acc,
        zero_shot_acc,
        selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub index: usize,
    pub is_noisy: bool,
    pub grad_l1: f64,
}

/// L1 norm of the logit gradient of every sample under the model's current
/// parameters, without updating anything.
pub fn grad_audit(model: &PrototypeModel, ds: &Dataset, loss: LossKind) -> Result<Vec<AuditRecord>> {
    loss.validate()?;
    check_dims(model, ds)?;
    let emb = model.embeddings()?;
    let mut z = vec![0.0; model.classes()];
    Ok((0..ds.len())
        .map(|i| {
            emb.logits_into(ds.row(i), &mut z);
            AuditRecord {
                index: i,
                is_noisy: ds.mask()[i],
                grad_l1: loss.eval_unchecked(&z, ds.noisy()[i]).grad_l1(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub loss: String,
    pub clean_count: usize,
    pub noisy_count: usize,
    pub clean_mean: Option<f64>,
    pub noisy_mean: Option<f64>,
}

impl AuditSummary {
    pub fn from_records(loss: LossKind, records: &[AuditRecord]) -> Self {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for r in records {
            sums[r.is_noisy as usize] += r.grad_l1;
            counts[r.is_noisy as usize] += 1;
        }
        let mean = |g: usize| (counts[g] > 0).then(|| sums[g] / counts[g] as f64);
        Self {
            loss: loss.to_string(),
            clean_count: counts[0],
            noisy_count: counts[1],
            clean_mean: mean(0),
            noisy_mean: mean(1),
        }
    }
}

pub fn audit_csv(records: &[AuditRecord]) -> String {
    let mut out = String::from("index,is_noisy,grad_l1\n");
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.index, r.is_noisy, r.grad_l1));
    }
    out
}
