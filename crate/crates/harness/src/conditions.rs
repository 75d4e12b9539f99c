//! Condition sets for each training mode and for inference, plus memory
//! retrieval over a clip's camera poses.

use anyhow::Result;
use ndarray::{Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use scenecomp_core::conditioning::{
    assemble_context, frames_to_latent, retrieve_memory, CanonicalMotionSequence, ConditionSet,
    ContextSequence, MemoryBank, MemoryEntry, PatchEmbedding,
};
use scenecomp_core::flowmatch::{masked_target, LossRegion, ModeKind, TrainingMode};
use scenecomp_core::geometry::{CameraPose, PlacementTrack, RgbdFrame, TokenGrid};
use scenecomp_core::toymodel::{augment_bbox, ModelInput, MotionInput};

use crate::config::{MotionOnlyLoss, RunConfig};
use crate::dataset::{cast_track, Clip};
use crate::world::box_mask;

/// Position scale of viewpoint similarity: a quarter of the room diagonal.
pub fn memory_sigma() -> f64 {
    let (w, h, d) = (12.0f64, 6.0f64, 8.2f64);
    (w * w + h * h + d * d).sqrt() / 4.0
}

/// Model-ready conditioning for one clip.
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub context: ContextSequence<f32>,
    pub motion: Option<(CanonicalMotionSequence<f32>, PlacementTrack<f32>)>,
}

impl Conditioned {
    pub fn input<'a>(&'a self, z_t: &'a Array4<f32>, t: f32) -> ModelInput<'a, f32> {
        ModelInput {
            z_t,
            t,
            context: &self.context,
            motion: self
                .motion
                .as_ref()
                .map(|(sequence, track)| MotionInput { sequence, track }),
        }
    }
}

/// Everything that goes into one generation request.
#[derive(Debug, Clone)]
pub struct Request {
    pub env: Vec<RgbdFrame<f32>>,
    pub identity: Vec<RgbdFrame<f32>>,
    pub memory: Option<Vec<RgbdFrame<f32>>>,
    /// `T x H x W`, 1 where content is generated.
    pub mask: Array3<f32>,
    pub motion: CanonicalMotionSequence<f32>,
    pub track: Option<PlacementTrack<f32>>,
}

impl Request {
    pub fn build(self, grid: &TokenGrid) -> Result<Conditioned> {
        let cond = ConditionSet {
            env: self.env,
            motion: self.motion,
            identity: self.identity,
            memory: self.memory,
            mask: self.mask,
            global_token: None,
        };
        let context = assemble_context(&cond, &PatchEmbedding::flatten(grid.patch, 4), grid)?;
        Ok(Conditioned {
            context,
            motion: self.track.map(|t| (cond.motion, t)),
        })
    }
}

/// Top-1 unused memory entry for each of `k` evenly spaced query poses.
pub fn retrieve_for_poses(
    bank: &MemoryBank<f32>,
    poses: &[CameraPose<f64>],
    k: usize,
) -> Vec<RgbdFrame<f32>> {
    let sigma = memory_sigma();
    let index_of = |e: &MemoryEntry<f32>| {
        bank.entries()
            .iter()
            .position(|x| std::ptr::eq(x, e))
            .expect("entry of this bank")
    };
    let mut used = vec![false; bank.len()];
    let mut out = Vec::with_capacity(k);
    for j in 0..k.min(poses.len()) {
        let q = poses[j * poses.len() / k].cast::<f32>();
        let ranked = retrieve_memory(bank, &q, bank.len(), sigma);
        if let Some(i) = ranked.into_iter().map(index_of).find(|i| !used[*i]) {
            used[i] = true;
            out.push(frame_from_rgbd(&bank.entries()[i].frame));
        }
    }
    out
}

pub fn frame_from_rgbd(a: &Array3<f32>) -> RgbdFrame<f32> {
    let (h, w, _) = a.dim();
    RgbdFrame {
        rgb: a.slice(ndarray::s![.., .., ..3]).to_owned(),
        depth: a.slice(ndarray::s![.., .., 3]).to_owned(),
        coverage: ndarray::Array2::from_elem((h, w), true),
    }
}

/// Memory bank holding a clip's displaced-sprite renders at its own poses.
pub fn clip_bank(clip: &Clip) -> Result<MemoryBank<f32>> {
    let mut bank = MemoryBank::new(clip.memory.len().max(1))?;
    for (i, (f, p)) in clip.memory.iter().zip(&clip.poses).enumerate() {
        bank.push(f.to_rgbd(), p.cast(), i as u64);
    }
    Ok(bank)
}

/// A training example: conditioning, substituted target and loss region.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub cond: Conditioned,
    pub target: Array4<f32>,
    pub region: LossRegion<f32>,
    pub mode: TrainingMode,
}

fn blank_inside(f: &RgbdFrame<f32>, mask: &Array3<f32>, t: usize) -> RgbdFrame<f32> {
    let mut out = f.clone();
    for ((y, x), m) in mask.index_axis(ndarray::Axis(0), t).indexed_iter() {
        if *m != 0.0 {
            for c in 0..3 {
                out.rgb[[y, x, c]] = 0.0;
            }
            out.depth[[y, x]] = 0.0;
            out.coverage[[y, x]] = false;
        }
    }
    out
}

/// Builds the conditions of `mode` for `clip`. History is capped at
/// `T - 1` frames so at least one frame is generated.
pub fn training_sample(
    clip: &Clip,
    mode: TrainingMode,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainSample> {
    let t_len = clip.len();
    let n = clip.spec.image;
    let grid = clip.spec.grid();
    let history = mode.history_frames.min(t_len - 1);
    let motion_used = mode.kind.uses_motion();
    let track = if motion_used {
        Some(cast_track::<f64, f32>(&augment_bbox(
            &clip.track,
            rng,
            &cfg.augment(),
        )?))
    } else {
        None
    };
    let targets = if mode.kind == ModeKind::SceneOnly {
        &clip.background
    } else {
        &clip.frames
    };
    let mut mask = match (mode.kind, &track) {
        (ModeKind::MotionOnly, Some(tr)) => {
            box_mask(&cast_track::<f32, f64>(tr), n).mapv(|v| v as f32)
        }
        _ => Array3::ones((t_len, n, n)),
    };
    mask.slice_mut(ndarray::s![..history, .., ..]).fill(0.0);
    let mut env: Vec<RgbdFrame<f32>> = match mode.kind {
        ModeKind::MotionOnly => (0..t_len)
            .map(|t| blank_inside(&clip.frames[t], &mask, t))
            .collect(),
        _ => clip.env.clone(),
    };
    for (t, e) in env.iter_mut().enumerate().take(history) {
        *e = targets[t].clone();
    }
    let identity = if motion_used {
        clip.identity.clone()
    } else {
        Vec::new()
    };
    let memory = if mode.kind != ModeKind::MotionOnly && rng.random_bool(cfg.train.memory_prob) {
        Some(retrieve_for_poses(
            &clip_bank(clip)?,
            &clip.poses,
            cfg.train.memory_k,
        ))
    } else {
        None
    };
    let z0 = frames_to_latent(targets)?;
    let keep = frames_to_latent(&env)?;
    let target = masked_target(&z0.view(), &keep.view(), &mask.view())?;
    let region = if mode.kind == ModeKind::MotionOnly
        && cfg.train.motion_only_loss == MotionOnlyLoss::Restricted
    {
        LossRegion::Within(mask.clone())
    } else {
        LossRegion::All
    };
    let cond = Request {
        env,
        identity,
        memory,
        mask,
        motion: clip.motion.clone(),
        track,
    }
    .build(&grid)?;
    Ok(TrainSample {
        cond,
        target,
        region,
        mode: TrainingMode {
            kind: mode.kind,
            history_frames: history,
        },
    })
}

/// Full-mode request for generating a clip from its sparse environment,
/// identity and motion, with optional history frames and memory.
pub fn generation_request(
    clip: &Clip,
    history: &[RgbdFrame<f32>],
    memory: Option<Vec<RgbdFrame<f32>>>,
    with_motion: bool,
) -> Request {
    let t_len = clip.len();
    let n = clip.spec.image;
    let mut mask = Array3::ones((t_len, n, n));
    let mut env = clip.env.clone();
    for (t, h) in history.iter().enumerate().take(t_len) {
        env[t] = h.clone();
        mask.index_axis_mut(ndarray::Axis(0), t).fill(0.0);
    }
    Request {
        env,
        identity: if with_motion {
            clip.identity.clone()
        } else {
            Vec::new()
        },
        memory,
        mask,
        motion: clip.motion.clone(),
        track: with_motion.then(|| cast_track(&clip.track)),
    }
}

/// Latent-space draw of `z1 ~ N(0, 1)` shaped like a clip.
pub fn noise_like(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f32> {
    use rand_distr::{Distribution, StandardNormal};
    Array4::from_shape_simple_fn(shape, || {
        let v: f32 = StandardNormal.sample(rng);
        v
    })
}
