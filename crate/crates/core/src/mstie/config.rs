use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Mouth crop height the model expects.
    pub crop_height: usize,
    /// Mouth crop width the model expects.
    pub crop_width: usize,
    /// Patch side length `P`.
    pub patch: usize,
    /// Embedding dimension `e`.
    pub embed: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub heads_self: usize,
    pub heads_cross: usize,
    pub ffn_multiplier: usize,
    pub dropout: f64,
    /// Classifier hidden width; `None` means `embed / 2`.
    pub classifier_hidden: Option<usize>,
    /// Longest sequence the temporal positional table covers.
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            crop_height: 64,
            crop_width: 144,
            patch: 16,
            embed: 128,
            spatial_layers: 2,
            temporal_layers: 2,
            heads_self: 4,
            heads_cross: 4,
            ffn_multiplier: 4,
            dropout: 0.1,
            classifier_hidden: None,
            max_frames: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for the synthetic toy dataset.
    pub fn toy() -> Self {
        Self {
            embed: 16,
            spatial_layers: 1,
            temporal_layers: 1,
            heads_self: 2,
            heads_cross: 4,
            ffn_multiplier: 2,
            dropout: 0.0,
            classifier_hidden: Some(8),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.patch == 0 || self.crop_height % self.patch != 0 || self.crop_width % self.patch != 0 {
            return Err(ModelError::DimensionMismatch(format!(
                "crop {}x{} is not divisible by patch {}",
                self.crop_height, self.crop_width, self.patch
            )));
        }
        if self.embed == 0 || self.heads_self == 0 || self.heads_cross == 0 {
            return bad("embed and head counts must be positive".into());
        }
        if self.embed % self.heads_self != 0 || self.embed % self.heads_cross != 0 {
            return bad(format!(
                "embed {} not divisible by heads ({} self, {} cross)",
                self.embed, self.heads_self, self.heads_cross
            ));
        }
        if self.ffn_multiplier == 0 || self.hidden() == 0 || self.max_frames < 2 {
            return bad("ffn_multiplier, classifier_hidden and max_frames must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.crop_height / self.patch, self.crop_width / self.patch)
    }

    /// Tokens per frame, `(H/P)·(W/P)`.
    pub fn tokens_per_frame(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn hidden(&self) -> usize {
        self.classifier_hidden.unwrap_or(self.embed / 2)
    }
}
