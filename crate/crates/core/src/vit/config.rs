use serde::{Deserialize, Serialize};

/// Hyperparameters of an encoder-only Vision Transformer.
///
/// Per-head key and value widths are independent of `d_model`; adding a head
/// adds a full query/key/value triple rather than splitting a fixed width.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub d_model: usize,
    pub d_key: usize,
    pub d_value: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoders: usize,
    pub classes: usize,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("patch size {patch} does not divide image size {image}")]
    PatchDivisibility { image: usize, patch: usize },
    #[error("at least 2 classes required, got {0}")]
    TooFewClasses(usize),
    #[error("d_model must be at least 2 for layer normalization, got {0}")]
    NarrowModel(usize),
}

impl ModelConfig {
    /// Square model with every internal width set to `dims`.
    pub fn uniform(
        image_size: usize,
        patch_size: usize,
        channels: usize,
        dims: usize,
        heads: usize,
        encoders: usize,
        classes: usize,
    ) -> Self {
        Self {
            image_size,
            patch_size,
            channels,
            d_model: dims,
            d_key: dims,
            d_value: dims,
            d_ff: dims,
            heads,
            encoders,
            classes,
            use_bias: true,
        }
    }

    pub fn with_grid_point(&self, heads: usize, encoders: usize) -> Self {
        Self {
            heads,
            encoders,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("d_key", self.d_key),
            ("d_value", self.d_value),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("encoders", self.encoders),
        ];
        for (field, v) in fields {
            if v == 0 {
                return Err(ConfigError::NonPositive { field });
            }
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(ConfigError::PatchDivisibility {
                image: self.image_size,
                patch: self.patch_size,
            });
        }
        if self.classes < 2 {
            return Err(ConfigError::TooFewClasses(self.classes));
        }
        if self.d_model < 2 {
            return Err(ConfigError::NarrowModel(self.d_model));
        }
        Ok(())
    }

    /// Token count N = (s/p)².
    pub fn tokens(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Length of one flattened patch, p²C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Dataset geometries used in the reference experiments, with the training
/// set size needed for determination-ratio arithmetic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub model: ModelConfig,
    pub train_samples: u64,
    pub heads: &'static [usize],
    pub encoders: &'static [usize],
}

const GRID_4: &[usize] = &[1, 2, 4, 8];
const GRID_6: &[usize] = &[1, 2, 4, 8, 16, 32];

pub fn presets() -> Vec<Preset> {
    vec![
        Preset {
            name: "mnist",
            model: ModelConfig::uniform(32, 2, 1, 64, 4, 4, 10),
            train_samples: 60_000,
            heads: GRID_4,
            encoders: GRID_4,
        },
        Preset {
            name: "cifar100",
            model: ModelConfig::uniform(64, 8, 3, 128, 4, 4, 100),
            train_samples: 50_000,
            heads: GRID_6,
            encoders: GRID_6,
        },
        Preset {
            name: "birds",
            model: ModelConfig::uniform(128, 8, 3, 32, 4, 4, 200),
            train_samples: 5_994,
            heads: GRID_4,
            encoders: GRID_4,
        },
        Preset {
            name: "places",
            model: ModelConfig::uniform(128, 16, 3, 32, 4, 4, 365),
            train_samples: 1_803_460,
            heads: GRID_6,
            encoders: GRID_6,
        },
        Preset {
            name: "imagenet",
            model: ModelConfig::uniform(128, 16, 3, 64, 4, 4, 1000),
            train_samples: 1_281_167,
            heads: GRID_4,
            encoders: GRID_4,
        },
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

impl Default for ModelConfig {
    /// The MNIST geometry at h = t = 4.
    fn default() -> Self {
        ModelConfig::uniform(32, 2, 1, 64, 4, 4, 10)
    }
}
