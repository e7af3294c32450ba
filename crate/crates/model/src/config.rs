use occlu_core::matching::IntersectionMode;
use occlu_core::MatchWeights;
use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Architecture and loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input resolution images are resized to.
    pub image_height: usize,
    pub image_width: usize,
    /// Channels of the last backbone stage.
    pub backbone_channels: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub queries: usize,
    pub pair_layers: usize,
    pub distance_layers: usize,
    pub occlusion_layers: usize,
    /// Foreground object categories; the background class is added on top.
    pub num_classes: usize,
    pub dropout: f64,
    /// Predict the generalized intersection box.
    pub git: bool,
    /// Supervise the intersection box for non-overlapping pairs too.
    pub pini: bool,
    /// Read distance and occlusion heads straight from the pair decoder.
    pub single_decoder: bool,
    pub loss: MatchWeights<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_height: 128,
            image_width: 128,
            backbone_channels: 128,
            hidden_dim: 64,
            ffn_dim: 128,
            encoder_layers: 6,
            heads: 4,
            queries: 100,
            pair_layers: 6,
            distance_layers: 3,
            occlusion_layers: 3,
            num_classes: 6,
            dropout: 0.1,
            git: true,
            pini: true,
            single_decoder: false,
            loss: MatchWeights::default(),
        }
    }
}

pub const MIN_IMAGE_SIDE: usize = 32;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.image_height < MIN_IMAGE_SIDE || self.image_width < MIN_IMAGE_SIDE {
            return bad(format!("image sides must be at least {MIN_IMAGE_SIDE}"));
        }
        if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return bad(format!("hidden_dim {} is not divisible by heads {}", self.hidden_dim, self.heads));
        }
        if !self.hidden_dim.is_multiple_of(4) {
            return bad(format!("hidden_dim {} must be divisible by 4 for the positional encoding", self.hidden_dim));
        }
        if self.queries == 0 {
            return bad("queries must be at least 1".into());
        }
        if self.pair_layers == 0 {
            return bad("pair_layers must be at least 1".into());
        }
        if !self.single_decoder && (self.distance_layers == 0 || self.occlusion_layers == 0) {
            return bad("relationship decoders need at least one layer each".into());
        }
        if self.num_classes == 0 || self.backbone_channels == 0 || self.ffn_dim == 0 {
            return bad("num_classes, backbone_channels and ffn_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.loss.is_valid() {
            return bad("loss weights must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn intersection_mode(&self) -> IntersectionMode {
        IntersectionMode { git: self.git, pini: self.pini }
    }

    /// Feature grid for an input of the given size: `ceil(side / 32)`.
    pub fn grid(height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(32), width.div_ceil(32))
    }
}
