use serde::{Deserialize, Serialize};

use crate::conditioning::MotionOptions;
use crate::error::{invalid, Result};
use crate::rope::RopeConfig;

/// Shape and hyperparameters of the velocity transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub patch: usize,
    pub canonical_h: usize,
    pub canonical_w: usize,
    pub latent_channels: usize,
    pub motion_channels: usize,
    pub rank: usize,
    pub ffn_mult: usize,
    pub rope: RopeConfig,
    pub motion: MotionOptions,
}

impl ModelConfig {
    /// Desk-scale defaults: 64 wide, 4 heads, 2 blocks, rank 4 adapters.
    pub fn desk() -> Self {
        Self::new(64, 4, 2, 2, (8, 8), 4, 4, 4).expect("valid defaults")
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        heads: usize,
        blocks: usize,
        patch: usize,
        canonical: (usize, usize),
        latent_channels: usize,
        motion_channels: usize,
        rank: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        let cfg = Self {
            dim,
            heads,
            blocks,
            patch,
            canonical_h: canonical.0,
            canonical_w: canonical.1,
            latent_channels,
            motion_channels,
            rank,
            ffn_mult: 4,
            rope: RopeConfig::new(dim / heads)?,
            motion: MotionOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads.max(1)
    }

    /// Channels of one flattened latent patch.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.latent_channels
    }

    pub fn hidden(&self) -> usize {
        self.dim * self.ffn_mult
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "width {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.rank == 0 {
            return Err(invalid("adapter rank must be at least 1"));
        }
        if self.blocks == 0 || self.patch == 0 || self.ffn_mult == 0 {
            return Err(invalid(
                "blocks, patch size and ffn multiplier must be positive",
            ));
        }
        if self.latent_channels == 0 || self.motion_channels == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        if self.canonical_h == 0 || self.canonical_w == 0 {
            return Err(invalid("canonical motion size must be positive"));
        }
        if self.rope.head_dim != self.head_dim() {
            return Err(invalid(format!(
                "rope head_dim {} differs from per-head width {}",
                self.rope.head_dim,
                self.head_dim()
            )));
        }
        self.rope.validate()?;
        self.rope
            .validate_background(self.canonical_h, self.canonical_w)
    }
}
