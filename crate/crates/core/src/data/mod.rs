//! Datasets, image transforms and patch extraction.

mod augment;
mod dataset;
pub mod idx;
pub(crate) mod patches;
mod resize;
mod synth;

pub use augment::{augment, AugmentDraws, AugmentationConfig};
pub use dataset::{images_to_tensor, Image, ImageDataset, Split};
pub use idx::{load_idx_dataset, load_mnist_dir, load_mnist_idx};
pub use patches::{extract_patches, reassemble_patches};
pub use resize::{resize, resize_dataset};
pub use synth::{synth_context_dataset, synth_context_splits, SampleMeta, SyntheticContextConfig, SyntheticSplit};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated IDX file, need {expected} bytes, have {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: unsupported IDX layout: {reason}")]
    Layout { path: PathBuf, reason: String },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("patch size {patch} does not divide image size {size}")]
    PatchDivisibility { size: usize, patch: usize },
    #[error("geometry {found:?} does not match expected {expected:?}")]
    Geometry { expected: Vec<usize>, found: Vec<usize> },
    #[error("invalid augmentation config: {0}")]
    Augmentation(String),
    #[error("invalid synthetic config: {0}")]
    Synthetic(String),
}
