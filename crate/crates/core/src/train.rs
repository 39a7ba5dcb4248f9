//! Optimization, the training loop, and voting evaluation.
//!
//! Training follows the reference recipe: Nesterov SGD (momentum 0.9,
//! weight decay 2e-4) under a per-epoch cosine learning-rate schedule,
//! shuffled batches with random anisotropic scale + translation
//! augmentation, and cross-entropy loss. Normalization parameters
//! (batch-norm gamma/beta, affine alpha/beta) are exempt from weight decay.
//!
//! Everything here is deterministic given the RNG: shuffling, augmentation,
//! and dropout all consume one shared stream in a fixed order, so a seed
//! reproduces a training run bit for bit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{batch_iter, DataError, Dataset};
use crate::geometry::{augment, AugmentConfig, GeomError};
use crate::math;
use crate::model::{FpsSeed, Model, ModelError, Param};
use crate::rng::Xoshiro256StarStar;

/// Hyperparameters of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total epochs (the cosine schedule's horizon).
    pub epochs: usize,
    /// Samples per optimization step.
    pub batch_size: usize,
    /// Peak learning rate (the schedule starts here).
    pub lr_max: f32,
    /// Nesterov momentum coefficient, in `[0, 1)`.
    pub momentum: f32,
    /// L2 weight decay, applied to FC weights and biases only.
    pub weight_decay: f32,
    /// Seed for shuffling, augmentation, and dropout.
    pub seed: u64,
    /// Softmax-voting copies used at evaluation time (1 = no voting).
    pub voting_repeats: usize,
    /// Augmentation distribution for training and voting.
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    /// Reference defaults: 300 epochs, batch 32, lr 0.1, momentum 0.9,
    /// weight decay 2e-4, 8 voting copies.
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            lr_max: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            seed: 0,
            voting_repeats: 8,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Checks the documented bounds.
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_max > 0.0) {
            return Err(TrainError::InvalidConfig {
                reason: "lr_max must be positive",
            });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig {
                reason: "momentum must be in [0, 1)",
            });
        }
        if !(self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig {
                reason: "weight_decay must be nonnegative",
            });
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig {
                reason: "batch_size must be positive",
            });
        }
        if self.voting_repeats == 0 {
            return Err(TrainError::InvalidConfig {
                reason: "voting_repeats must be positive",
            });
        }
        self.augment
            .validate()
            .map_err(|_| TrainError::InvalidConfig {
                reason: "invalid augmentation bounds",
            })
    }
}

/// Training and evaluation failures.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    /// A hyperparameter violated its bound.
    InvalidConfig {
        /// What was wrong.
        reason: &'static str,
    },
    /// The loss left the finite range; training aborted.
    NonFiniteLoss {
        /// Epoch index of the failing step.
        epoch: usize,
        /// Batch index within the epoch.
        batch: usize,
    },
    /// A parameter reached the optimizer without a gradient.
    MissingGradient {
        /// Name of the parameter.
        name: String,
    },
    /// Optimizer state and parameter shapes disagree.
    StateShapeMismatch {
        /// Name of the parameter.
        name: String,
    },
    /// Evaluation was asked to run on an empty dataset.
    EmptyDataset,
    /// A model forward failed.
    Model(ModelError),
    /// Augmentation failed.
    Geometry(GeomError),
    /// The dataset is malformed (missing or out-of-range labels).
    Data(DataError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig { reason } => write!(f, "invalid train config: {reason}"),
            TrainError::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}; aborting")
            }
            TrainError::MissingGradient { name } => {
                write!(f, "parameter {name} has no gradient")
            }
            TrainError::StateShapeMismatch { name } => {
                write!(f, "optimizer state shape mismatch for {name}")
            }
            TrainError::EmptyDataset => write!(f, "cannot evaluate an empty dataset"),
            TrainError::Model(e) => write!(f, "model failure: {e}"),
            TrainError::Geometry(e) => write!(f, "augmentation failure: {e}"),
            TrainError::Data(e) => write!(f, "malformed dataset: {e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<GeomError> for TrainError {
    fn from(e: GeomError) -> Self {
        TrainError::Geometry(e)
    }
}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

/// Cosine annealing: `0.5 * lr_max * (1 + cos(pi * t / T))`, monotonically
/// nonincreasing from `lr_max` at `t = 0` to `0` at `t = T`. A zero-epoch
/// horizon returns `lr_max`.
#[must_use]
pub fn cosine_lr(t: usize, total: usize, lr_max: f32) -> f32 {
    debug_assert!(t <= total, "epoch index beyond the schedule horizon");
    if total == 0 {
        return lr_max;
    }
    let frac = t as f64 / total as f64;
    (0.5 * lr_max as f64 * (1.0 + math::cos_f64(core::f64::consts::PI * frac))) as f32
}

/// Nesterov SGD with per-parameter velocity state.
///
/// Each step computes `g' = g + wd * p`, `v <- m * v + g'`, then
/// `p <- p - lr * (g' + m * v)` — the lookahead folded into the update, so
/// ports of this rule agree term for term. Weight decay skips parameters
/// whose [`crate::model::ParamKind::decays`] is false.
pub struct SgdNesterov {
    velocities: Vec<Vec<f32>>,
    momentum: f32,
    weight_decay: f32,
}

impl SgdNesterov {
    /// Zero-velocity state sized to `model`'s parameter list.
    #[must_use]
    pub fn new(model: &Model, momentum: f32, weight_decay: f32) -> Self {
        Self::from_params(model.params(), momentum, weight_decay)
    }

    /// Zero-velocity state sized to an explicit parameter list.
    #[must_use]
    pub fn from_params(params: &[Param], momentum: f32, weight_decay: f32) -> Self {
        SgdNesterov {
            velocities: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            momentum,
            weight_decay,
        }
    }

    /// Applies one update to every parameter from its populated gradient.
    pub fn step(&mut self, params: &mut [Param], lr: f32) -> Result<(), TrainError> {
        if params.len() != self.velocities.len() {
            return Err(TrainError::StateShapeMismatch {
                name: String::from("<parameter count>"),
            });
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocities) {
            let grad = p.value.grad.as_ref().ok_or_else(|| TrainError::MissingGradient {
                name: p.name.clone(),
            })?;
            if grad.len() != v.len() {
                return Err(TrainError::StateShapeMismatch {
                    name: p.name.clone(),
                });
            }
            let wd = if p.kind.decays() { self.weight_decay } else { 0.0 };
            let m = self.momentum;
            // Split borrow: the value buffer and the grad buffer are
            // disjoint fields of the tensor.
            let (data, grad) = p.value.data_and_grad();
            let grad = grad.expect("checked above");
            for ((x, &g), vel) in data.iter_mut().zip(grad.iter()).zip(v.iter_mut()) {
                let g = g + wd * *x;
                *vel = m * *vel + g;
                *x -= lr * (g + m * *vel);
            }
        }
        Ok(())
    }
}

/// One epoch: shuffles, augments, runs batched forward/backward, and steps
/// the optimizer at `cosine_lr(epoch_idx)`. Returns the mean per-sample
/// loss. Aborts with a diagnostic if the loss leaves the finite range.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut SgdNesterov,
    ds: &Dataset,
    cfg: &TrainConfig,
    epoch_idx: usize,
    rng: &mut Xoshiro256StarStar,
) -> Result<f32, TrainError> {
    ds.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let lr = cosine_lr(epoch_idx, cfg.epochs, cfg.lr_max);
    let batches = batch_iter(ds.len(), cfg.batch_size, true, rng);
    let mut weighted_loss = 0.0f64;
    for (bi, batch) in batches.iter().enumerate() {
        let mut clouds = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for &i in batch {
            let s = &ds.samples[i as usize];
            let mut coords = s.coords.clone();
            augment(&mut coords, &cfg.augment, rng)?;
            clouds.push(coords);
            labels.push(s.label.expect("validated above"));
        }
        let refs: Vec<&[[f32; 3]]> = clouds.iter().map(|c| c.as_slice()).collect();
        model.zero_grads();
        let loss = model.train_step_gradients(&refs, &labels, rng)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: epoch_idx,
                batch: bi,
            });
        }
        opt.step(model.params_mut(), lr)?;
        weighted_loss += loss as f64 * batch.len() as f64;
    }
    Ok((weighted_loss / ds.len() as f64) as f32)
}

/// Classification quality counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Correct predictions over all predictions.
    pub overall_acc: f64,
    /// Unweighted mean of per-class recalls, over classes with
    /// at least one sample.
    pub class_mean_acc: f64,
    /// Row-major `classes x classes` count matrix, indexed
    /// `[true_class][predicted_class]`.
    pub confusion: Vec<u32>,
    /// Number of classes (side length of `confusion`).
    pub classes: usize,
}

impl Metrics {
    /// Derives the accuracy summaries from a filled confusion matrix.
    #[must_use]
    pub fn from_confusion(confusion: Vec<u32>, classes: usize) -> Self {
        debug_assert_eq!(confusion.len(), classes * classes);
        let mut total = 0u64;
        let mut correct = 0u64;
        let mut recall_sum = 0.0f64;
        let mut seen_classes = 0u32;
        for t in 0..classes {
            let row = &confusion[t * classes..(t + 1) * classes];
            let row_total: u64 = row.iter().map(|&c| u64::from(c)).sum();
            total += row_total;
            correct += u64::from(row[t]);
            if row_total > 0 {
                recall_sum += f64::from(row[t]) / row_total as f64;
                seen_classes += 1;
            }
        }
        Metrics {
            overall_acc: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
            class_mean_acc: if seen_classes > 0 {
                recall_sum / f64::from(seen_classes)
            } else {
                0.0
            },
            confusion,
            classes,
        }
    }

    /// Per-class recall (`NaN`-free: classes without samples report 0).
    #[must_use]
    pub fn per_class_recall(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|t| {
                let row = &self.confusion[t * self.classes..(t + 1) * self.classes];
                let total: u64 = row.iter().map(|&c| u64::from(c)).sum();
                if total > 0 {
                    f64::from(row[t]) / total as f64
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Numerically careful softmax used for vote averaging.
fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let exps: Vec<f64> = logits.iter().map(|&l| math::exp_f64(l as f64 - max)).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// The individual softmax distributions a voting evaluation averages for one
/// cloud: the raw view first, then `repeats - 1` augmented views drawn from
/// `aug` via `rng` (six draws per view). [`evaluate`] consumes these, and
/// exposing them lets callers log or inspect the pre-average votes without
/// duplicating the prediction path.
pub fn vote_distributions(
    model: &Model,
    coords: &[[f32; 3]],
    repeats: usize,
    aug: &AugmentConfig,
    rng: &mut Xoshiro256StarStar,
    fps: FpsSeed,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let mut dists = Vec::with_capacity(repeats.max(1));
    for r in 0..repeats.max(1) {
        let logits = if r == 0 {
            model.classify(coords, fps)?
        } else {
            let mut view = coords.to_vec();
            augment(&mut view, aug, rng)?;
            model.classify(&view, fps)?
        };
        dists.push(softmax_f64(logits.as_slice()));
    }
    Ok(dists)
}

/// Evaluates `model` on `ds` with softmax voting: each sample is classified
/// from the average of `voting_repeats` softmax distributions — the raw
/// cloud first, then `voting_repeats - 1` augmented copies drawn from
/// `aug` via `rng` (six draws per copy, samples in dataset order). The
/// predicted class is the argmax of the averaged distribution, lowest index
/// on ties. `voting_repeats = 1` is plain single-view evaluation.
pub fn evaluate(
    model: &Model,
    ds: &Dataset,
    voting_repeats: usize,
    aug: &AugmentConfig,
    rng: &mut Xoshiro256StarStar,
    fps: FpsSeed,
) -> Result<Metrics, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    ds.validate()?;
    let classes = ds.class_names.len();
    let mut confusion = vec![0u32; classes * classes];
    for s in &ds.samples {
        let mut avg = vec![0.0f64; classes];
        for dist in vote_distributions(model, &s.coords, voting_repeats, aug, rng, fps)? {
            for (a, p) in avg.iter_mut().zip(dist) {
                *a += p;
            }
        }
        let mut pred = 0usize;
        for (c, &p) in avg.iter().enumerate() {
            if p > avg[pred] {
                pred = c;
            }
        }
        let label = s.label.expect("validated above") as usize;
        confusion[label * classes + pred] += 1;
    }
    Ok(Metrics::from_confusion(confusion, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        assert!((cosine_lr(0, 300, 0.1) - 0.1).abs() < 1e-9);
        assert!((cosine_lr(150, 300, 0.1) - 0.05).abs() < 1e-9);
        assert!(cosine_lr(300, 300, 0.1).abs() < 1e-9);
    }

    #[test]
    fn cosine_schedule_is_nonincreasing() {
        let mut prev = f32::INFINITY;
        for t in 0..=100 {
            let lr = cosine_lr(t, 100, 0.1);
            assert!(lr <= prev + 1e-12);
            prev = lr;
        }
    }

    #[test]
    fn metrics_match_hand_counted_confusion() {
        // Two classes: 75 of class 0 all predicted 0; 25 of class 1 also
        // predicted 0 (a constant predictor on an imbalanced set).
        let mut confusion = vec![0u32; 4];
        confusion[0] = 75;
        confusion[2] = 25;
        let m = Metrics::from_confusion(confusion, 2);
        assert!((m.overall_acc - 0.75).abs() < 1e-12);
        assert!((m.class_mean_acc - 0.5).abs() < 1e-12);
        assert_eq!(m.per_class_recall(), vec![1.0, 0.0]);
    }

    #[test]
    fn config_validation_bounds() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        let mut bad = TrainConfig::default();
        bad.momentum = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = TrainConfig::default();
        bad.lr_max = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = TrainConfig::default();
        bad.weight_decay = -1.0;
        assert!(bad.validate().is_err());
    }
}
