//! AdamW training loop and loss evaluation.
//!
//! Every random choice is drawn from a stream derived from the configured
//! seed and its position (epoch, batch), so a run is a pure function of
//! `(seed, config, data)`.

mod optimizer;

pub use optimizer::{adamw_step, OptimizerState, BETA1, BETA2, EPSILON};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Precision, Real};
use crate::data::{augment, images_to_tensor, AugmentationConfig, DataError, ImageDataset};
use crate::seed::derive_seed;
use crate::table::fmt_float;
use crate::vit::{ModelError, VisionTransformer};

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
pub const EVAL_BATCH: usize = 256;
pub const METRICS_HEADER: &str = "epoch loss val_loss";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset {found:?} does not match model (channels, size, classes) {expected:?}")]
    Geometry { expected: [usize; 3], found: [usize; 3] },
    #[error("non-finite gradient in parameter {parameter}")]
    NonFiniteGradient { parameter: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("optimizer state does not match the parameters")]
    OptimizerMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("metrics log {path}: {source}")]
    Log { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub precision: Precision,
    pub augmentation: AugmentationConfig,
    /// Substrings of parameter names exempt from weight decay.
    pub decay_exclude: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            precision: Precision::F32,
            augmentation: AugmentationConfig::default(),
            decay_exclude: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config("weight_decay must be non-negative".into()));
        }
        if self.augmentation.enabled {
            self.augmentation.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean loss over the training set, evaluated without augmentation.
    pub loss: f64,
    pub val_loss: f64,
    /// Mean of the per-batch losses seen during the epoch.
    pub running_loss: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    /// Everything except wall-clock time.
    pub fn same_values(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.loss.to_bits() == other.loss.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.running_loss.to_bits() == other.running_loss.to_bits()
    }

    pub fn log_row(&self) -> String {
        format!("{} {} {}", self.epoch, fmt_float(self.loss), fmt_float(self.val_loss))
    }
}

/// Append-only `epoch loss val_loss` text log.
pub struct MetricsLog {
    out: BufWriter<File>,
    path: String,
}

impl MetricsLog {
    /// Creates or truncates `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self, TrainError> {
        let err = |source| TrainError::Log {
            path: path.display().to_string(),
            source,
        };
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(err)?;
        let mut log = Self {
            out: BufWriter::new(file),
            path: path.display().to_string(),
        };
        log.write_line(METRICS_HEADER)?;
        Ok(log)
    }

    fn write_line(&mut self, line: &str) -> Result<(), TrainError> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|source| TrainError::Log {
                path: self.path.clone(),
                source,
            })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<(), TrainError> {
        self.write_line(&m.log_row())
    }
}

fn check_geometry<T: Real>(model: &VisionTransformer<T>, ds: &ImageDataset) -> Result<(), TrainError> {
    let c = model.config();
    let expected = [c.channels, c.image_size, c.classes];
    let found = [ds.channels(), ds.size(), ds.classes()];
    if expected != found {
        return Err(TrainError::Geometry { expected, found });
    }
    Ok(())
}

fn log_softmax_nll(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Cross-entropy of every sample, in dataset order.
pub fn per_sample_losses<T: Real>(model: &VisionTransformer<T>, ds: &ImageDataset) -> Result<Vec<f64>, TrainError> {
    check_geometry(model, ds)?;
    let chunks: Vec<Vec<usize>> = (0..ds.len())
        .collect::<Vec<_>>()
        .chunks(EVAL_BATCH)
        .map(<[usize]>::to_vec)
        .collect();
    let per_chunk = chunks
        .par_iter()
        .map(|idx| {
            let logits = model.logits(&ds.batch::<T>(idx))?;
            let m = model.config().classes;
            let z = logits.to_f64_vec();
            Ok(idx
                .iter()
                .enumerate()
                .map(|(r, &i)| log_softmax_nll(&z[r * m..(r + 1) * m], ds.label(i)))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Order-independent mean: values are sorted, then averaged as offsets from
/// the minimum, so a constant input returns that constant exactly.
pub fn stable_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Mean cross-entropy over the dataset, without augmentation or gradients.
/// The result does not depend on sample order or on the evaluation batching.
pub fn evaluate<T: Real>(model: &VisionTransformer<T>, ds: &ImageDataset) -> Result<f64, TrainError> {
    let mut losses = per_sample_losses(model, ds)?;
    Ok(stable_mean(&mut losses))
}

/// Input batch `indices` of `ds` for epoch `epoch`, batch `batch`.
pub fn training_batch<T: Real>(
    ds: &ImageDataset,
    indices: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Result<crate::autodiff::Tensor<T>, TrainError> {
    if !cfg.augmentation.enabled {
        return Ok(ds.batch(indices));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[AUGMENT_STREAM, epoch as u64, batch as u64]));
    let images: Vec<_> = indices
        .iter()
        .map(|&i| augment(&ds.image(i), &cfg.augmentation, &mut rng))
        .collect();
    Ok(images_to_tensor(&images)?)
}

/// Sample order of epoch `epoch` (0-based).
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &[SHUFFLE_STREAM, epoch as u64],
    )));
    order
}

/// Trains for `cfg.epochs` epochs and evaluates both sets after each.
pub fn train<T: Real>(
    model: &mut VisionTransformer<T>,
    train_set: &ImageDataset,
    test_set: &ImageDataset,
    cfg: &TrainConfig,
    mut log: Option<&mut MetricsLog>,
) -> Result<Vec<EpochMetrics>, TrainError> {
    cfg.validate()?;
    check_geometry(model, train_set)?;
    check_geometry(model, test_set)?;
    if cfg.epochs > 0 && train_set.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    let mut state = OptimizerState::new(model.params()).exclude_from_decay(model.params(), &cfg.decay_exclude);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        let mut batch_losses = Vec::new();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let images = training_batch::<T>(train_set, idx, cfg, epoch, b)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.label(i)).collect();
            model.zero_grad();
            let loss = match model.accumulate_gradients(&images, &labels) {
                Ok(l) if l.is_finite() => l,
                Ok(_) | Err(ModelError::Autodiff(crate::autodiff::AutodiffError::NonFinite { .. })) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: b,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            adamw_step(model.params_mut(), &mut state, cfg.learning_rate, cfg.weight_decay)?;
            batch_losses.push(loss.as_f64());
        }
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            loss: evaluate(model, train_set)?,
            val_loss: evaluate(model, test_set)?,
            running_loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(log) = log.as_deref_mut() {
            log.append(&metrics)?;
        }
        history.push(metrics);
    }
    Ok(history)
}

#[cfg(test)]
mod tests;
