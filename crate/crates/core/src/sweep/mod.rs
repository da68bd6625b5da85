//! Grid sweeps over (heads, encoders), cross-sections and plot tables.

mod output;

pub use output::{
    emit_data_file, format_data_file, parse_data_file, write_outputs, DataRow, Manifest, OutputFiles, DATA_HEADER,
};

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Precision, Real};
use crate::capacity::{determination_ratio, DeterminationInputs, DeterminationRatio};
use crate::data::{load_mnist_dir, resize_dataset, synth_context_dataset, ImageDataset, Split, SyntheticContextConfig};
use crate::seed::derive_seed;
use crate::trainer::{train, TrainConfig, TrainError};
use crate::vit::{count_params, ModelConfig, VisionTransformer};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("cross-section at {axis} is empty")]
    EmptySection { axis: Axis },
    #[error("dataset: {0}")]
    Data(#[from] crate::data::DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub heads: Vec<usize>,
    pub encoders: Vec<usize>,
    pub base: ModelConfig,
    pub train: TrainConfig,
    /// Grid seed; each configuration derives its own seed from it.
    pub seed: u64,
    /// Concurrent configurations; 0 means the rayon default.
    #[serde(default)]
    pub workers: usize,
}

fn check_axis(name: &str, values: &[usize]) -> Result<(), SweepError> {
    if values.is_empty() {
        return Err(SweepError::Grid(format!("{name} list is empty")));
    }
    if values.contains(&0) || !values.windows(2).all(|w| w[0] < w[1]) {
        return Err(SweepError::Grid(format!(
            "{name} list must be positive, ascending and distinct, got {values:?}"
        )));
    }
    Ok(())
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), SweepError> {
        check_axis("heads", &self.heads)?;
        check_axis("encoders", &self.encoders)?;
        Ok(())
    }

    /// All grid points, ordered by (t, h).
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.encoders
            .iter()
            .flat_map(|&t| self.heads.iter().map(move |&h| (h, t)))
            .collect()
    }

    pub fn config_seed(&self, heads: usize, encoders: usize) -> u64 {
        derive_seed(self.seed, &[heads as u64, encoders as u64])
    }
}

/// Per-epoch losses kept in records (wall-clock time excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub heads: usize,
    pub encoders: usize,
    pub params: u64,
    pub q: DeterminationRatio,
    /// Final training-set loss.
    pub loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub seed: u64,
    pub history: Vec<EpochLoss>,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.loss.is_some() && self.val_loss.is_some()
    }

    /// Recomputes `P` from the base config and `Q` from (M, K, P).
    pub fn verify(&self, base: &ModelConfig, k: usize) -> bool {
        let Ok(count) = count_params(&base.with_grid_point(self.heads, self.encoders)) else {
            return false;
        };
        let inputs = DeterminationInputs {
            m: base.classes as u64,
            k: k as u64,
            p: count.total,
        };
        count.total == self.params
            && determination_ratio(&inputs).is_ok_and(|q| q == self.q)
            && self.q.consistent_with(&inputs)
    }
}

fn train_typed<T: Real>(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &ImageDataset,
    test_set: &ImageDataset,
) -> Result<Vec<EpochLoss>, TrainError> {
    let mut model = VisionTransformer::<T>::build(config, train_cfg.seed)?;
    let history = train(&mut model, train_set, test_set, train_cfg, None)?;
    Ok(history
        .into_iter()
        .map(|m| EpochLoss {
            epoch: m.epoch,
            loss: m.loss,
            val_loss: m.val_loss,
        })
        .collect())
}

fn run_point(
    grid: &SweepGrid,
    heads: usize,
    encoders: usize,
    train_set: &ImageDataset,
    test_set: &ImageDataset,
) -> SweepRecord {
    let config = grid.base.with_grid_point(heads, encoders);
    let seed = grid.config_seed(heads, encoders);
    let params = count_params(&config).map(|c| c.total).unwrap_or(0);
    let q = determination_ratio(&DeterminationInputs {
        m: config.classes as u64,
        k: train_set.len() as u64,
        p: params.max(1),
    })
    .expect("positive inputs");
    let train_cfg = TrainConfig {
        seed,
        ..grid.train.clone()
    };
    let outcome = if params == 0 {
        Err("invalid model config".to_string())
    } else {
        match train_cfg.precision {
            Precision::F32 => train_typed::<f32>(&config, &train_cfg, train_set, test_set),
            Precision::F64 => train_typed::<f64>(&config, &train_cfg, train_set, test_set),
        }
        .map_err(|e| e.to_string())
    };
    let (history, error) = match outcome {
        Ok(h) => (h, None),
        Err(e) => (Vec::new(), Some(e)),
    };
    SweepRecord {
        heads,
        encoders,
        params,
        q,
        loss: history.last().map(|e| e.loss),
        val_loss: history.last().map(|e| e.val_loss),
        seed,
        error: error.or_else(|| (grid.train.epochs == 0).then(|| "no epochs were run".to_string())),
        history,
    }
}

/// Trains every grid point. Failures are recorded on their record and do not
/// stop the sweep. Records are ordered by (t, h) whatever the scheduling.
pub fn run_sweep(
    grid: &SweepGrid,
    train_set: &ImageDataset,
    test_set: &ImageDataset,
) -> Result<Vec<SweepRecord>, SweepError> {
    grid.validate()?;
    let points = grid.points();
    let work = || {
        points
            .par_iter()
            .map(|&(h, t)| run_point(grid, h, t, train_set, test_set))
            .collect::<Vec<_>>()
    };
    let records = if grid.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(grid.workers)
            .build()
            .map_err(|e| SweepError::Grid(e.to_string()))?
            .install(work)
    } else {
        work()
    };
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "fixed", content = "value")]
pub enum Axis {
    Heads(usize),
    Encoders(usize),
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Heads(h) => write!(f, "h={h}"),
            Axis::Encoders(t) => write!(f, "t={t}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub axis: Axis,
    /// Successful records on the section, Q ascending.
    pub records: Vec<SweepRecord>,
}

pub fn cross_section(records: &[SweepRecord], axis: Axis) -> Result<CrossSection, SweepError> {
    let mut section: Vec<SweepRecord> = records
        .iter()
        .filter(|r| {
            r.ok()
                && match axis {
                    Axis::Heads(h) => r.heads == h,
                    Axis::Encoders(t) => r.encoders == t,
                }
        })
        .cloned()
        .collect();
    if section.is_empty() {
        return Err(SweepError::EmptySection { axis });
    }
    section.sort_by(|a, b| a.q.cmp(&b.q).then((a.heads, a.encoders).cmp(&(b.heads, b.encoders))));
    Ok(CrossSection { axis, records: section })
}

/// Where a sweep's images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DatasetSpec {
    /// IDX directory; the first `train_samples`/`test_samples` of each split,
    /// bilinearly resized to `image_size`.
    Mnist {
        dir: PathBuf,
        train_samples: usize,
        test_samples: usize,
        image_size: usize,
    },
    Synthetic(SyntheticContextConfig),
}

impl DatasetSpec {
    pub fn load(&self) -> Result<(ImageDataset, ImageDataset), SweepError> {
        match self {
            DatasetSpec::Mnist {
                dir,
                train_samples,
                test_samples,
                image_size,
            } => {
                let train = load_mnist_dir(dir, Split::Train)?.take(*train_samples);
                let test = load_mnist_dir(dir, Split::Test)?.take(*test_samples);
                Ok((
                    resize_dataset(&train, *image_size)?,
                    resize_dataset(&test, *image_size)?,
                ))
            }
            DatasetSpec::Synthetic(cfg) => Ok(synth_context_dataset(cfg)?),
        }
    }
}

/// Small-scale defaults: 3×3 grid, width 16, five epochs on a 5 000 / 1 000
/// MNIST subset resized to 32×32 with 4×4 patches.
pub mod desk {
    use super::*;

    pub const HEADS: [usize; 3] = [1, 2, 4];
    pub const ENCODERS: [usize; 3] = [1, 2, 4];
    pub const TRAIN_SAMPLES: usize = 5_000;
    pub const TEST_SAMPLES: usize = 1_000;
    pub const IMAGE_SIZE: usize = 32;
    pub const PATCH_SIZE: usize = 4;
    pub const WIDTH: usize = 16;
    pub const EPOCHS: usize = 5;
    pub const SEED: u64 = 2021;

    pub fn model() -> ModelConfig {
        ModelConfig::uniform(IMAGE_SIZE, PATCH_SIZE, 1, WIDTH, 4, 4, 10)
    }

    pub fn train_config() -> TrainConfig {
        TrainConfig {
            epochs: EPOCHS,
            ..TrainConfig::default()
        }
    }

    pub fn grid() -> SweepGrid {
        SweepGrid {
            heads: HEADS.to_vec(),
            encoders: ENCODERS.to_vec(),
            base: model(),
            train: train_config(),
            seed: SEED,
            workers: 0,
        }
    }

    pub fn dataset(dir: impl Into<PathBuf>) -> DatasetSpec {
        DatasetSpec::Mnist {
            dir: dir.into(),
            train_samples: TRAIN_SAMPLES,
            test_samples: TEST_SAMPLES,
            image_size: IMAGE_SIZE,
        }
    }
}
