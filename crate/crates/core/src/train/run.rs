use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::weighted_ce_loss;
use super::optim::AdamW;
use super::weights::{class_weights, ClassCounts, ClassWeights};
use super::TrainConfig;
use crate::autodiff::Graph;
use crate::data::{augment_sample, normalize_image, AugmentPolicy, FoldPlan, ABNORMAL, NORMAL};
use crate::error::{bail, Error, Result};
use crate::metrics::{confusion, metrics, ConfusionMatrix, MetricSet};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::vit::{forward_batch, init_params, Dropout, VitConfig, VitParams};

/// Raw `[3 × S × S]` images in `[0, 1]` with their binary labels.
#[derive(Debug, Clone, Copy)]
pub struct ImageSet<'a> {
    pub images: &'a [Tensor],
    pub labels: &'a [u8],
}

impl<'a> ImageSet<'a> {
    pub fn new(images: &'a [Tensor], labels: &'a [u8]) -> Result<Self> {
        if images.len() != labels.len() {
            bail!(Contract, "{} images but {} labels", images.len(), labels.len());
        }
        Ok(ImageSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Everything a run needs besides its hyperparameters and split.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub data: ImageSet<'a>,
    pub vit: &'a VitConfig,
    pub policy: &'a AugmentPolicy,
    /// Starting weights (e.g. imported pretrained ones); `None` draws a
    /// seeded initialisation.
    pub init: Option<&'a VitParams>,
}

impl<'a> Setup<'a> {
    pub fn new(data: ImageSet<'a>, vit: &'a VitConfig, policy: &'a AugmentPolicy) -> Self {
        Setup { data, vit, policy, init: None }
    }

    pub fn with_init(self, init: &'a VitParams) -> Self {
        Setup { init: Some(init), ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
}

/// Outcome of one training run, as written to `results/*.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fold: Option<usize>,
    pub seed: u64,
    pub status: RunStatus,
    pub class_weights: ClassWeights,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Validation metrics of the best checkpoint.
    pub validation: Option<Evaluation>,
    pub stopped_early: bool,
    pub checkpoint: Option<String>,
}

impl RunResult {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn metrics(&self) -> Option<MetricSet> {
        self.validation.as_ref().map(|v| v.metrics)
    }
}

/// A run together with its best-checkpoint parameters.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub result: RunResult,
    pub params: Option<VitParams>,
}

/// Argmax class for `[B × 2]` logits; ties go to normal.
pub fn predict(logits: &Tensor) -> Vec<u8> {
    (0..logits.rows())
        .map(|i| if logits.get2(i, 1) > logits.get2(i, 0) { ABNORMAL } else { NORMAL })
        .collect()
}

const EVAL_CHUNK: usize = 64;

fn logits_for(params: &VitParams, config: &VitConfig, images: &[Tensor]) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(images.len() * 2);
    for chunk in images.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false)?;
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let out = forward_batch(&mut g, &bound, config, &refs, None)?;
        rows.extend_from_slice(g.value(out).data());
    }
    Tensor::new(&[images.len(), 2], rows)
}

/// Loss and metrics of `params` on already normalised images.
pub fn evaluate(
    params: &VitParams,
    config: &VitConfig,
    images: &[Tensor],
    labels: &[u8],
    weights: &ClassWeights,
    smoothing: f64,
) -> Result<Evaluation> {
    if images.is_empty() {
        bail!(Contract, "cannot evaluate on zero images");
    }
    let logits = logits_for(params, config, images)?;
    let per = super::loss::per_sample_loss(&logits, labels, weights, smoothing);
    let loss = per.iter().sum::<f64>() / per.len() as f64;
    let cm = confusion(labels, &predict(&logits))?;
    Ok(Evaluation { loss, confusion: cm, metrics: metrics(&cm) })
}

/// Normalised images for `indices`. Training batches (`epoch` given) are
/// augmented with per-(epoch, sample) seeds; validation batches never are.
pub fn prepare_batch(
    data: ImageSet<'_>,
    indices: &[usize],
    policy: &AugmentPolicy,
    seed: u64,
    epoch: Option<usize>,
) -> Result<Vec<Tensor>> {
    indices
        .iter()
        .map(|&i| match epoch {
            Some(e) => {
                let s = derive_seed(seed, &[("augment", e as u64), ("sample", i as u64)]);
                normalize_image(&augment_sample(&data.images[i], policy, s)?)
            }
            None => normalize_image(&data.images[i]),
        })
        .collect()
}

fn param_names(config: &VitConfig) -> Vec<String> {
    config.param_shapes().into_iter().map(|(n, _)| n).collect()
}

/// Train on `train_idx`, selecting the checkpoint with the lowest loss on
/// `val_idx`.
///
/// Mini-batches are reshuffled every epoch; augmentation touches training
/// images only. Training stops once `early_stop_patience` consecutive epochs
/// fail to improve the best validation loss, or at `epochs`. A run whose
/// loss or parameters become non-finite is returned with
/// [`RunStatus::Diverged`] rather than as an error.
pub fn fit(
    setup: Setup<'_>,
    train_idx: &[usize],
    val_idx: &[usize],
    train: &TrainConfig,
    seed: u64,
    fold: Option<usize>,
) -> Result<TrainedRun> {
    let Setup { data, vit, policy, init } = setup;
    train.validate()?;
    vit.validate()?;
    policy.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        bail!(Contract, "training and validation sets must be non-empty");
    }
    let counts = ClassCounts::from_labels(train_idx.iter().map(|&i| data.labels[i]));
    if counts.normal == 0 || counts.abnormal == 0 {
        bail!(InfeasibleStratification, "training set holds a single class ({:?})", counts);
    }
    let weights = class_weights(counts, train.weight_multipliers)?;
    let names = param_names(vit);

    let val_images = prepare_batch(data, val_idx, policy, seed, None)?;
    let val_labels: Vec<u8> = val_idx.iter().map(|&i| data.labels[i]).collect();

    let mut params = match init {
        Some(p) => VitParams::from_tensors(vit, p.tensors().into_iter().cloned().collect())?,
        None => init_params(vit, derive_seed(seed, &[("init", 0)]))?,
    };
    let mut opt = AdamW::new(params.tensors());
    let steps_per_epoch = train_idx.len().div_ceil(train.batch_size);
    let schedule = train.schedule(train.epochs * steps_per_epoch);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[("shuffle", 0)]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[("dropout", 0)]));

    let mut result = RunResult {
        fold,
        seed,
        status: RunStatus::Completed,
        class_weights: weights,
        history: Vec::new(),
        best_epoch: None,
        validation: None,
        stopped_early: false,
        checkpoint: None,
    };
    let mut best: Option<(f64, VitParams, Evaluation)> = None;
    let mut since_best = 0;
    let mut order = train_idx.to_vec();
    let mut step = 0;

    let diverged = |mut result: RunResult, epoch: usize, e: Error| -> Result<TrainedRun> {
        match e {
            Error::NonFinite(m) => {
                result.status = RunStatus::Diverged { epoch, message: m };
                Ok(TrainedRun { result, params: None })
            }
            other => Err(other),
        }
    };

    for epoch in 0..train.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = schedule.lr_at_step(step);
        for batch in order.chunks(train.batch_size) {
            let images = prepare_batch(data, batch, policy, seed, Some(epoch))?;
            let labels: Vec<u8> = batch.iter().map(|&i| data.labels[i]).collect();
            lr = schedule.lr_at_step(step);
            let outcome = (|| -> Result<f64> {
                let mut g = Graph::new();
                let bound = params.bind(&mut g, true)?;
                let refs: Vec<&Tensor> = images.iter().collect();
                let mut drop = Dropout { rate: vit.dropout_rate, rng: &mut dropout_rng };
                let dropout = (vit.dropout_rate > 0.0).then_some(&mut drop);
                let logits = forward_batch(&mut g, &bound, vit, &refs, dropout)?;
                let loss = weighted_ce_loss(&mut g, logits, &labels, &weights, train.label_smoothing)?;
                let grads = g.backward(loss)?;
                let grads: Vec<Tensor> = bound.vars().iter().map(|&v| grads.wrt(v)).collect();
                let value = g.value(loss).data()[0];
                let mut slots = params.tensors_mut();
                opt.step(&mut slots, &grads, &names, lr, train.weight_decay)?;
                if !params.is_finite() {
                    bail!(NonFinite, "parameters became non-finite at step {step}");
                }
                Ok(value)
            })();
            match outcome {
                Ok(v) => loss_sum += v * batch.len() as f64,
                Err(e) => return diverged(result, epoch, e),
            }
            step += 1;
        }
        let eval = match evaluate(&params, vit, &val_images, &val_labels, &weights, train.label_smoothing) {
            Ok(e) if e.loss.is_finite() => e,
            Ok(_) => return diverged(result, epoch, Error::NonFinite("validation loss".to_string())),
            Err(e) => return diverged(result, epoch, e),
        };
        result.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_loss: eval.loss,
            learning_rate: lr,
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| eval.loss < *b);
        if improved {
            best = Some((eval.loss, params.clone(), eval));
            result.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > train.early_stop_patience {
                result.stopped_early = epoch + 1 < train.epochs;
                break;
            }
        }
    }
    let (_, best_params, best_eval) = best.expect("at least one epoch ran");
    result.validation = Some(best_eval);
    Ok(TrainedRun { result, params: Some(best_params) })
}

/// Train on every fold except `fold_id` and validate on `fold_id`.
pub fn train_one_run(setup: Setup<'_>, plan: &FoldPlan, fold_id: usize, train: &TrainConfig) -> Result<TrainedRun> {
    if fold_id >= plan.k {
        bail!(Contract, "fold {fold_id} out of range for k = {}", plan.k);
    }
    if plan.assignment.len() != setup.data.len() {
        bail!(Contract, "fold plan covers {} samples, dataset has {}", plan.assignment.len(), setup.data.len());
    }
    let seed = derive_seed(train.seed, &[("fold", fold_id as u64)]);
    let tr = plan.training_indices(fold_id);
    let va = plan.validation_indices(fold_id);
    fit(setup, &tr, &va, train, seed, Some(fold_id)).map_err(|e| match e {
        Error::InfeasibleStratification(m) => Error::InfeasibleStratification(format!("fold {fold_id}: {m}")),
        other => other,
    })
}
