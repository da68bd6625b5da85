//! Vision Transformer architecture and parameter accounting.

pub mod checkpoint;
mod config;
mod count;
mod model;

pub use config::{preset, presets, ConfigError, ModelConfig, Preset};
pub use count::{count_params, ParamCountBreakdown};
pub use model::{Bound, ForwardTrace, VisionTransformer};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("input geometry {found:?} does not match expected {expected:?} (0 = any)")]
    Geometry { expected: Vec<usize>, found: Vec<usize> },
    #[error("encoder {index} out of range (model has {encoders})")]
    NoSuchEncoder { index: usize, encoders: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
}
