//! Run configuration: a TOML file of `key = value` lines grouped into
//! `[world]`, `[model]`, `[train]` and `[eval]` sections. Every key has a
//! default, so an empty file is a valid config. Unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use scenecomp_core::conditioning::MotionOptions;
use scenecomp_core::flowmatch::{LogitNormal, ModeSchedule};
use scenecomp_core::toymodel::{AdamConfig, BBoxAugment, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Image side in pixels.
    pub image: usize,
    /// Pixels per token side.
    pub patch: usize,
    /// Canonical motion-map side in tokens.
    pub canonical: usize,
    /// Frames per clip.
    pub frames: usize,
    pub focal: f64,
    /// Points in each dense room cloud.
    pub points: usize,
    pub pillars: usize,
    /// Fraction of room points kept for the sparse environment render.
    pub env_keep: f64,
    /// Joint heatmap channels of the motion maps (1 to 3).
    pub joints: usize,
    /// Seed of the first training room; rooms use consecutive seeds.
    pub scene_seed: u64,
    pub train_scenes: usize,
    /// Rooms never seen in training, used for cross-composition.
    pub heldout_scenes: usize,
    pub train_clips: usize,
    /// Clips from the training rooms held back for self-reconstruction.
    pub val_clips: usize,
    /// Seed for clip layouts, camera paths and sprite placement.
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            image: 16,
            patch: 2,
            canonical: 8,
            frames: 8,
            focal: 16.0,
            points: 24_000,
            pillars: 3,
            env_keep: 0.05,
            joints: 3,
            scene_seed: 1000,
            train_scenes: 8,
            heldout_scenes: 4,
            train_clips: 256,
            val_clips: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Adapter rank.
    pub rank: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ffn_mult: usize,
    /// Zero the motion residual outside the box instead of relying on the
    /// background label alone.
    pub hard_mask: bool,
    /// Seed of the frozen base weights and adapter down-projections.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            blocks: 2,
            rank: 4,
            ffn_mult: 4,
            hard_mask: false,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionOnlyLoss {
    /// Regress only inside the generation mask.
    Restricted,
    /// Regress the substituted target everywhere.
    Substituted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub steps: u64,
    /// Samples averaged per optimizer step.
    pub batch: usize,
    pub lr_adapters: f64,
    pub lr_motion: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Logit-normal timestep location and scale.
    pub logit_mu: f64,
    pub logit_sigma: f64,
    pub scene_only: f64,
    pub motion_only: f64,
    pub full: f64,
    pub history_prob: f64,
    pub history_min: usize,
    pub history_max: usize,
    /// Chance of attaching retrieved memory frames in scene-only and full modes.
    pub memory_prob: f64,
    pub memory_k: usize,
    /// Clip-level bbox center jitter, tokens.
    pub bbox_jitter: f64,
    /// Clip-level bbox side jitter, relative.
    pub bbox_scale: f64,
    pub motion_only_loss: MotionOnlyLoss,
    /// Steps between loss-log lines.
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let sched = ModeSchedule::default();
        let adam = AdamConfig::default();
        Self {
            seed: 3,
            steps: 12_000,
            batch: 1,
            lr_adapters: adam.lr_adapters,
            lr_motion: adam.lr_motion,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            logit_mu: 0.0,
            logit_sigma: 1.0,
            scene_only: sched.scene_only,
            motion_only: sched.motion_only,
            full: sched.full,
            history_prob: sched.history_prob,
            history_min: sched.history_min,
            history_max: sched.history_max,
            memory_prob: 0.5,
            memory_k: 4,
            bbox_jitter: 0.5,
            bbox_scale: 0.1,
            motion_only_loss: MotionOnlyLoss::Restricted,
            log_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seed: u64,
    pub sampling_steps: usize,
    /// Foreground threshold on mean absolute RGB difference from the room.
    pub tau: f64,
    /// Frames of the loop-and-revisit path.
    pub long_frames: usize,
    /// History frames carried into the second chunk.
    pub long_history: usize,
    pub long_seeds: usize,
    pub max_placement_self: f64,
    pub max_background_ratio_self: f64,
    pub max_recon_ratio: f64,
    pub max_placement_cross: f64,
    pub max_background_ratio_cross: f64,
    /// Chunk-boundary frame difference relative to within-chunk differences.
    pub max_boundary_ratio: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seed: 5,
            sampling_steps: 20,
            tau: 0.1,
            long_frames: 14,
            long_history: 2,
            long_seeds: 5,
            max_placement_self: 2.0,
            max_background_ratio_self: 3.0,
            max_recon_ratio: 0.25,
            max_placement_cross: 3.0,
            max_background_ratio_cross: 1.5,
            max_boundary_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses config text, then applies `section.key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .context("run config is not valid key = value text")?;
        for ov in overrides {
            let Some((key, value)) = ov.split_once('=') else {
                bail!("override `{ov}` must look like section.key=value");
            };
            let Some((section, field)) = key.trim().split_once('.') else {
                bail!("override key `{key}` must name a section, as in train.steps");
            };
            let value: toml::Value = match format!("v = {}", value.trim()).parse::<toml::Table>() {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(value.trim().to_string()),
            };
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(sec) = entry.as_table_mut() else {
                bail!("`{section}` is not a section");
            };
            sec.insert(field.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("run config has an unknown key or a value of the wrong type")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read run config {}", path.display()))?;
        Self::parse(&text, overrides).with_context(|| format!("in run config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        ensure!(w.frames >= 2, "world.frames must be at least 2");
        ensure!(
            w.patch > 0 && w.image.is_multiple_of(w.patch),
            "world.image must be a multiple of world.patch"
        );
        ensure!(w.train_scenes >= 1, "world.train_scenes must be positive");
        ensure!(w.train_clips >= 1, "world.train_clips must be positive");
        ensure!(
            (1..=3).contains(&w.joints),
            "world.joints must be 1, 2 or 3"
        );
        self.model_config()?;
        self.adam().validate()?;
        self.schedule().validate()?;
        self.timesteps().validate()?;
        self.augment().validate()?;
        let t = &self.train;
        ensure!(t.batch >= 1, "train.batch must be positive");
        ensure!(
            (0.0..=1.0).contains(&t.memory_prob),
            "train.memory_prob must lie in [0, 1]"
        );
        ensure!(t.memory_k >= 1, "train.memory_k must be positive");
        ensure!(t.log_every >= 1, "train.log_every must be positive");
        let e = &self.eval;
        ensure!(
            e.sampling_steps >= 1,
            "eval.sampling_steps must be positive"
        );
        ensure!(
            e.long_frames > w.frames && e.long_frames < 2 * w.frames,
            "eval.long_frames must exceed world.frames and leave room for one history chunk"
        );
        ensure!(
            e.long_history >= 1 && e.long_history < w.frames,
            "eval.long_history must lie in 1..world.frames"
        );
        ensure!(
            e.long_frames + e.long_history == 2 * w.frames,
            "eval.long_frames + eval.long_history must equal 2 * world.frames (two chunks sharing the history frames)"
        );
        ensure!(e.long_seeds >= 1, "eval.long_seeds must be positive");
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let w = &self.world;
        let mut cfg = ModelConfig::new(
            m.dim,
            m.heads,
            m.blocks,
            w.patch,
            (w.canonical, w.canonical),
            4,
            w.joints + 1,
            m.rank,
        )?;
        cfg.ffn_mult = m.ffn_mult;
        cfg.motion = MotionOptions {
            hard_mask: m.hard_mask,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(&self) -> AdamConfig {
        let t = &self.train;
        AdamConfig {
            lr_adapters: t.lr_adapters,
            lr_motion: t.lr_motion,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
        }
    }

    pub fn schedule(&self) -> ModeSchedule {
        let t = &self.train;
        ModeSchedule {
            scene_only: t.scene_only,
            motion_only: t.motion_only,
            full: t.full,
            history_prob: t.history_prob,
            history_min: t.history_min,
            history_max: t.history_max,
        }
    }

    pub fn timesteps(&self) -> LogitNormal {
        LogitNormal {
            mu: self.train.logit_mu,
            sigma: self.train.logit_sigma,
        }
    }

    pub fn augment(&self) -> BBoxAugment {
        BBoxAugment {
            jitter: self.train.bbox_jitter,
            scale: self.train.bbox_scale,
        }
    }
}
