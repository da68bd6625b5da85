use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ModelConfig};

/// Parameter tallies per block. Encoder blocks are per encoder; `total`
/// includes all `encoders` of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCountBreakdown {
    pub embedding: u64,
    pub positional: u64,
    pub attention_per_encoder: u64,
    pub ffn_per_encoder: u64,
    pub norm_per_encoder: u64,
    pub classifier: u64,
    pub encoders: u64,
    pub total: u64,
}

impl ParamCountBreakdown {
    pub fn per_encoder(&self) -> u64 {
        self.attention_per_encoder + self.ffn_per_encoder + self.norm_per_encoder
    }

    /// Parameters outside the encoder stack.
    pub fn fixed(&self) -> u64 {
        self.embedding + self.positional + self.classifier
    }
}

/// Closed-form parameter count.
pub fn count_params(config: &ModelConfig) -> Result<ParamCountBreakdown, ConfigError> {
    config.validate()?;
    let b = u64::from(config.use_bias);
    let d = config.d_model as u64;
    let dk = config.d_key as u64;
    let dv = config.d_value as u64;
    let dff = config.d_ff as u64;
    let h = config.heads as u64;
    let t = config.encoders as u64;
    let m = config.classes as u64;
    let n = config.tokens() as u64;
    let patch = config.patch_dim() as u64;

    let embedding = patch * d + b * d;
    let positional = n * d;
    let per_head = d * (2 * dk + dv) + b * (2 * dk + dv);
    let attention_per_encoder = h * per_head + h * dv * d + b * d;
    let ffn_per_encoder = d * dff + b * dff + dff * d + b * d;
    let norm_per_encoder = 4 * d;
    let classifier = d * m + b * m;
    let total = embedding + positional + t * (attention_per_encoder + ffn_per_encoder + norm_per_encoder) + classifier;
    Ok(ParamCountBreakdown {
        embedding,
        positional,
        attention_per_encoder,
        ffn_per_encoder,
        norm_per_encoder,
        classifier,
        encoders: t,
        total,
    })
}
