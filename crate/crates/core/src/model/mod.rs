//! The denoising transformer: tokenization of frame sequences, rotary
//! position tables over (frame, row, col), the conditioned transformer
//! itself, and checkpoint serialization.

mod checkpoint;
mod dit;
mod rope;
mod tokens;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DataIoError;
use crate::geometry::Attribute;
use crate::numerics::NumericsError;

pub use checkpoint::{
    load_checkpoint, model_from_checkpoint, save_checkpoint, wash_tensor_f32, CheckpointMeta,
};
pub use dit::{attr_index, ForwardOutput, Model, Params, Staged, ATTRIBUTE_COUNT};
pub use rope::rope_angles;
pub use tokens::{
    assemble_input, build_rgb_tokens, build_tokens, normalized_geo_channels, patchify,
    prediction_to_map, rgb_channels, unpatchify, PositionId, TokenBatch, TokenLayout,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("attribute {0:?} is not a trainable geometry target")]
    UnsupportedAttribute(Attribute),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataIoError),
}

/// How geometry tokens are attached to the rgb token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Geometry tokens reuse their rgb partner's (frame, row, col) position:
    /// the two streams are distinguished only by content.
    SharedPos,
    /// Geometry tokens are appended as extra frames (frame index + F).
    SeqConcat,
    /// Geometry channels are stacked onto rgb patches in one token stream.
    ChannelConcat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    /// Square patch edge in pixels.
    pub patch: usize,
    pub mlp_ratio: usize,
    pub mode: Conditioning,
    pub rope_base: f64,
    /// Head-dim split between the frame, row, and column rotary axes; each
    /// part must be even and they must sum to dim / heads.
    pub rope_split: [usize; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 4,
            dim: 128,
            patch: 8,
            mlp_ratio: 4,
            mode: Conditioning::SharedPos,
            rope_base: 10000.0,
            rope_split: [12, 10, 10],
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Patch token width for one modality (3 channels per pixel).
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Model input width; the stacked-channel mode carries both modalities
    /// in each token.
    pub fn input_dim(&self) -> usize {
        match self.mode {
            Conditioning::ChannelConcat => 2 * self.patch_dim(),
            _ => self.patch_dim(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.mlp_ratio == 0 || self.patch == 0 {
            return err("layers, heads, mlp_ratio, and patch must be positive".into());
        }
        if self.dim % 2 != 0 {
            return err(format!("dim {} must be even for the timestep embedding", self.dim));
        }
        if self.dim % self.heads != 0 {
            return err(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        let hd = self.head_dim();
        let sum: usize = self.rope_split.iter().sum();
        if sum != hd {
            return err(format!("rope_split {:?} sums to {sum}, head dim is {hd}", self.rope_split));
        }
        for part in self.rope_split {
            if part == 0 || part % 2 != 0 {
                return err(format!("rope_split {:?} parts must be positive and even", self.rope_split));
            }
        }
        if !(self.rope_base > 1.0) {
            return err(format!("rope_base {} must exceed 1", self.rope_base));
        }
        Ok(())
    }
}
