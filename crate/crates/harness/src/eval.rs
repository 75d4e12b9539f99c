//! Sampling and the three evaluation protocols.

use anyhow::{ensure, Result};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scenecomp_core::conditioning::{from_latent, MemoryBank};
use scenecomp_core::flowmatch::euler_sample;
use scenecomp_core::geometry::{PlacementTrack, RgbdFrame};
use scenecomp_core::toymodel::ToyModel;

use crate::conditions::{generation_request, noise_like, retrieve_for_poses, Conditioned};
use crate::config::RunConfig;
use crate::dataset::{
    base_spec, heldout_scene_seeds, train_scene_seeds, Clip, Dataset, SceneCache,
};
use crate::report::EvalReport;
use crate::world::{box_center, token_centroid, MotionKind, PathKind, IDENTITIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SelfReconstruction,
    CrossComposition,
    LongHorizon,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [
        Self::SelfReconstruction,
        Self::CrossComposition,
        Self::LongHorizon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SelfReconstruction => "self_reconstruction",
            Self::CrossComposition => "cross_composition",
            Self::LongHorizon => "long_horizon",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| anyhow::anyhow!("unknown protocol `{s}`; expected self_reconstruction, cross_composition or long_horizon"))
    }
}

/// Euler-integrates the model from `z1` and maps the result to `[0, 1]`
/// RGB-D frames.
pub fn generate(
    model: &ToyModel<f32>,
    cond: &Conditioned,
    z1: &Array4<f32>,
    steps: usize,
) -> Result<Vec<RgbdFrame<f32>>> {
    let z0 = euler_sample(|z, t| model.predict(&cond.input(z, t)), &z1.view(), steps)?;
    Ok(latent_frames(&z0))
}

pub fn latent_frames(z: &Array4<f32>) -> Vec<RgbdFrame<f32>> {
    let (t, h, w, _) = z.dim();
    (0..t)
        .map(|i| RgbdFrame {
            rgb: ndarray::Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
                from_latent(z[[i, y, x, c]]).clamp(0.0, 1.0)
            }),
            depth: Array2::from_shape_fn((h, w), |(y, x)| {
                from_latent(z[[i, y, x, 3]]).clamp(0.0, 1.0)
            }),
            coverage: Array2::from_elem((h, w), true),
        })
        .collect()
}

fn pixel_sq(a: &RgbdFrame<f32>, b: &RgbdFrame<f32>, y: usize, x: usize) -> f64 {
    let mut s: f64 = (0..3)
        .map(|c| f64::from(a.rgb[[y, x, c]] - b.rgb[[y, x, c]]).powi(2))
        .sum();
    s += f64::from(a.depth[[y, x]] - b.depth[[y, x]]).powi(2);
    s / 4.0
}

fn rgb_abs(a: &RgbdFrame<f32>, b: &RgbdFrame<f32>, y: usize, x: usize) -> f64 {
    (0..3)
        .map(|c| f64::from(a.rgb[[y, x, c]] - b.rgb[[y, x, c]]).abs())
        .sum::<f64>()
        / 3.0
}

/// Mean squared RGB-D error over all pixels of all frames.
pub fn video_mse(a: &[RgbdFrame<f32>], b: &[RgbdFrame<f32>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for ((y, x), _) in fa.depth.indexed_iter() {
            s += pixel_sq(fa, fb, y, x);
            n += 1;
        }
    }
    s / n as f64
}

/// Pixel mask of the union of all boxes of a track.
pub fn union_pixels(track: &PlacementTrack<f64>) -> Array2<bool> {
    let g = track.grid;
    let u = track.union_mask();
    Array2::from_shape_fn((g.height_px(), g.width_px()), |(y, x)| {
        u[(y / g.patch) * g.width + x / g.patch]
    })
}

/// Mean squared error outside `exclude`, over all frames.
pub fn masked_mse(a: &[RgbdFrame<f32>], b: &[RgbdFrame<f32>], exclude: &Array2<bool>) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for ((y, x), skip) in exclude.indexed_iter() {
            if !skip {
                s += pixel_sq(fa, fb, y, x);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// 1 where the mean RGB difference from the room render exceeds `tau`.
pub fn foreground(gen: &RgbdFrame<f32>, room: &RgbdFrame<f32>, tau: f64) -> Array2<f64> {
    Array2::from_shape_fn(gen.depth.dim(), |(y, x)| {
        if rgb_abs(gen, room, y, x) > tau {
            1.0
        } else {
            0.0
        }
    })
}

/// Mean distance in tokens between the foreground centroid and the box
/// center, over frames with a box. Frames with no foreground count as the
/// grid diagonal.
pub fn placement_error(
    gen: &[RgbdFrame<f32>],
    room: &[RgbdFrame<f32>],
    track: &PlacementTrack<f64>,
    tau: f64,
) -> f64 {
    let g = track.grid;
    let miss = ((g.width * g.width + g.height * g.height) as f64).sqrt();
    let mut total = 0.0;
    let mut n = 0usize;
    for (t, b) in track.boxes.iter().enumerate() {
        let Some(b) = b else { continue };
        let (bx, by) = box_center(b);
        total += match token_centroid(&foreground(&gen[t], &room[t], tau), g.patch) {
            Some((cx, cy)) => ((cx - bx).powi(2) + (cy - by).powi(2)).sqrt(),
            None => miss,
        };
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Placement error of a guess that always puts the sprite at the image
/// center; a floor any useful model has to beat.
pub fn center_guess_placement(track: &PlacementTrack<f64>) -> f64 {
    let g = track.grid;
    let (cx, cy) = (g.width as f64 / 2.0, g.height as f64 / 2.0);
    let d: Vec<f64> = track
        .boxes
        .iter()
        .flatten()
        .map(|b| {
            let (bx, by) = box_center(b);
            ((bx - cx).powi(2) + (by - cy).powi(2)).sqrt()
        })
        .collect();
    d.iter().sum::<f64>() / d.len().max(1) as f64
}

/// Pearson correlation, inside the boxes, between generated and reference
/// foreground magnitudes.
pub fn motion_correlation(
    gen: &[RgbdFrame<f32>],
    reference: &[RgbdFrame<f32>],
    room: &[RgbdFrame<f32>],
    track: &PlacementTrack<f64>,
) -> f64 {
    let p = track.grid.patch;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (t, bx) in track.boxes.iter().enumerate() {
        let Some(bx) = bx else { continue };
        for y in bx.y1 * p..bx.y2 * p {
            for x in bx.x1 * p..bx.x2 * p {
                a.push(rgb_abs(&gen[t], &room[t], y, x));
                b.push(rgb_abs(&reference[t], &room[t], y, x));
            }
        }
    }
    pearson(&a, &b)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Scores of one generated clip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClipScores {
    pub recon_mse: f64,
    pub background_mse: f64,
    pub placement: f64,
    pub correlation: f64,
    pub center_guess: f64,
}

/// Scores `gen` against a clip; reconstruction uses the clip's ground
/// truth, the rest only its room render and track.
pub fn score_clip(gen: &[RgbdFrame<f32>], clip: &Clip, tau: f64) -> ClipScores {
    ClipScores {
        recon_mse: video_mse(gen, &clip.frames),
        background_mse: masked_mse(gen, &clip.background, &union_pixels(&clip.track)),
        placement: placement_error(gen, &clip.background, &clip.track, tau),
        correlation: motion_correlation(gen, &clip.frames, &clip.background, &clip.track),
        center_guess: center_guess_placement(&clip.track),
    }
}

fn mean_scores(s: &[ClipScores]) -> ClipScores {
    let n = s.len().max(1) as f64;
    ClipScores {
        recon_mse: s.iter().map(|c| c.recon_mse).sum::<f64>() / n,
        background_mse: s.iter().map(|c| c.background_mse).sum::<f64>() / n,
        placement: s.iter().map(|c| c.placement).sum::<f64>() / n,
        correlation: s.iter().map(|c| c.correlation).sum::<f64>() / n,
        center_guess: s.iter().map(|c| c.center_guess).sum::<f64>() / n,
    }
}

fn clip_noise(cfg: &RunConfig, salt: u64, clip: &Clip) -> Array4<f32> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.eval.seed.wrapping_mul(0x9e37_79b9).wrapping_add(salt));
    let n = clip.spec.image;
    noise_like((clip.len(), n, n, 4), &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfReconstruction {
    pub trained: ClipScores,
    pub untrained: ClipScores,
    /// Background MSE of the trained model sampled with scene-only conditions.
    pub scene_only_background: f64,
}

pub fn self_reconstruction(
    model: &ToyModel<f32>,
    untrained: &ToyModel<f32>,
    data: &Dataset,
    cfg: &RunConfig,
) -> Result<SelfReconstruction> {
    ensure!(!data.val.is_empty(), "dataset has no validation clips");
    let steps = cfg.eval.sampling_steps;
    let tau = cfg.eval.tau;
    let (mut tr, mut un, mut so) = (Vec::new(), Vec::new(), Vec::new());
    for (i, clip) in data.val.iter().enumerate() {
        let grid = clip.spec.grid();
        let z1 = clip_noise(cfg, i as u64, clip);
        let full = generation_request(clip, &[], None, true).build(&grid)?;
        tr.push(score_clip(&generate(model, &full, &z1, steps)?, clip, tau));
        un.push(score_clip(
            &generate(untrained, &full, &z1, steps)?,
            clip,
            tau,
        ));
        let scene = generation_request(clip, &[], None, false).build(&grid)?;
        so.push(score_clip(&generate(model, &scene, &z1, steps)?, clip, tau).background_mse);
    }
    Ok(SelfReconstruction {
        trained: mean_scores(&tr),
        untrained: mean_scores(&un),
        scene_only_background: so.iter().sum::<f64>() / so.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossComposition {
    pub scores: ClipScores,
    pub cells: usize,
}

/// Every identity x motion pair on every held-out room, one plausible
/// clip per cell.
pub fn cross_composition(model: &ToyModel<f32>, cfg: &RunConfig) -> Result<CrossComposition> {
    let mut cache = SceneCache::default();
    let mut scores = Vec::new();
    let mut cell = 0u64;
    for scene in heldout_scene_seeds(&cfg.world) {
        for identity in 0..IDENTITIES.len() {
            for motion in MotionKind::ALL {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed ^ (0xc0de_0000 + cell));
                let mut base = base_spec(&cfg.world, scene);
                base.sprite.identity = identity;
                base.sprite.motion = motion;
                let kind = PathKind::ALL[rng.random_range(0..PathKind::ALL.len())];
                let clip = Clip::from_world(&cache.plausible_world(&base, kind, &mut rng)?)?;
                let cond = generation_request(&clip, &[], None, true).build(&clip.spec.grid())?;
                let z1 = clip_noise(cfg, 10_000 + cell, &clip);
                let gen = generate(model, &cond, &z1, cfg.eval.sampling_steps)?;
                scores.push(score_clip(&gen, &clip, cfg.eval.tau));
                cell += 1;
            }
        }
    }
    Ok(CrossComposition {
        scores: mean_scores(&scores),
        cells: scores.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongHorizon {
    pub drift_with_memory: Vec<f64>,
    pub drift_without_memory: Vec<f64>,
    /// Chunk-boundary frame difference over the mean within-chunk difference.
    pub boundary_ratio: f64,
}

fn slice_clip(clip: &Clip, start: usize, len: usize) -> Clip {
    let r = start..start + len;
    let mut motion = clip.motion.clone();
    motion.maps = clip
        .motion
        .maps
        .slice(ndarray::s![r.clone(), .., .., ..])
        .to_owned();
    motion.root.offsets = clip.motion.root.offsets[r.clone()].to_vec();
    let mut track = clip.track.clone();
    track.boxes = clip.track.boxes[r.clone()]
        .iter()
        .enumerate()
        .map(|(i, b)| b.map(|b| b.with_frame(i)))
        .collect();
    let mut spec = clip.spec;
    spec.frames = len;
    Clip {
        spec,
        poses: clip.poses[r.clone()].to_vec(),
        track,
        motion,
        frames: clip.frames[r.clone()].to_vec(),
        background: clip.background[r.clone()].to_vec(),
        env: clip.env[r.clone()].to_vec(),
        identity: clip.identity.clone(),
        memory: clip.memory[r].to_vec(),
    }
}

/// Two chained chunks over a loop-and-revisit path: the first generated
/// fresh, the second conditioned on the last history frames of the first,
/// with and without memory retrieved from the first chunk.
pub fn long_horizon(model: &ToyModel<f32>, cfg: &RunConfig) -> Result<LongHorizon> {
    let t = cfg.world.frames;
    let total = cfg.eval.long_frames;
    let hist = cfg.eval.long_history;
    let start_b = t - hist;
    let steps = cfg.eval.sampling_steps;
    let scenes = train_scene_seeds(&cfg.world);
    let mut cache = SceneCache::default();
    let (mut with, mut without) = (Vec::new(), Vec::new());
    let (mut boundary, mut intra) = (0.0, 0.0);
    for seed in 0..cfg.eval.long_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed ^ (0x10_0000 + seed as u64));
        let mut base = base_spec(&cfg.world, scenes[seed % scenes.len()]);
        base.frames = total;
        base.sprite.identity = rng.random_range(0..IDENTITIES.len());
        base.sprite.motion = MotionKind::ALL[rng.random_range(0..MotionKind::ALL.len())];
        let long =
            Clip::from_world(&cache.plausible_world(&base, PathKind::LoopRevisit, &mut rng)?)?;
        let a = slice_clip(&long, 0, t);
        let b = slice_clip(&long, start_b, t);
        let grid = a.spec.grid();
        let first = generate(
            model,
            &generation_request(&a, &[], None, true).build(&grid)?,
            &clip_noise(cfg, 20_000 + seed as u64, &a),
            steps,
        )?;
        let mut bank = MemoryBank::new(t)?;
        for (i, f) in first.iter().enumerate() {
            bank.push(f.to_rgbd(), a.poses[i].cast(), i as u64);
        }
        let history = &first[start_b..];
        let z1 = clip_noise(cfg, 30_000 + seed as u64, &b);
        let mut videos = Vec::new();
        for use_memory in [true, false] {
            let memory =
                use_memory.then(|| retrieve_for_poses(&bank, &b.poses, cfg.train.memory_k));
            let second = generate(
                model,
                &generation_request(&b, history, memory, true).build(&grid)?,
                &z1,
                steps,
            )?;
            let mut video = first.clone();
            video.extend(second[hist..].iter().cloned());
            videos.push(video);
        }
        let drift = |video: &[RgbdFrame<f32>]| {
            let mut s = 0.0;
            for i in t..total {
                let j = total - 1 - i;
                let mut exclude = Array2::from_elem((grid.height_px(), grid.width_px()), false);
                for k in [i, j] {
                    if let Some(bx) = long.track.get(k) {
                        let p = grid.patch;
                        for y in bx.y1 * p..bx.y2 * p {
                            for x in bx.x1 * p..bx.x2 * p {
                                exclude[[y, x]] = true;
                            }
                        }
                    }
                }
                s += masked_mse(&video[i..=i], &video[j..=j], &exclude);
            }
            s / (total - t) as f64
        };
        with.push(drift(&videos[0]));
        without.push(drift(&videos[1]));
        let diffs: Vec<f64> = (0..total - 1)
            .map(|k| video_mse(&videos[0][k..=k], &videos[0][k + 1..=k + 1]))
            .collect();
        boundary += diffs[t - 1];
        intra += diffs
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != t - 1)
            .map(|(_, d)| d)
            .sum::<f64>()
            / (diffs.len() - 1) as f64;
    }
    Ok(LongHorizon {
        drift_with_memory: with,
        drift_without_memory: without,
        boundary_ratio: if intra > 0.0 { boundary / intra } else { 0.0 },
    })
}

/// Runs the requested protocols and gathers the report.
pub fn evaluate(
    model: &ToyModel<f32>,
    untrained: &ToyModel<f32>,
    data: &Dataset,
    cfg: &RunConfig,
    protocols: &[Protocol],
) -> Result<EvalReport> {
    data.check_matches(&cfg.world)?;
    let mut report = EvalReport::default();
    let e = &cfg.eval;
    let mut self_bg = None;
    if protocols.contains(&Protocol::SelfReconstruction)
        || protocols.contains(&Protocol::CrossComposition)
    {
        let s = self_reconstruction(model, untrained, data, cfg)?;
        self_bg = Some(s.trained.background_mse);
        if protocols.contains(&Protocol::SelfReconstruction) {
            report.value("self.recon_mse", s.trained.recon_mse);
            report.value("self.untrained_recon_mse", s.untrained.recon_mse);
            report.check(
                "self.recon_ratio",
                s.trained.recon_mse / s.untrained.recon_mse,
                e.max_recon_ratio,
            );
            report.check(
                "self.placement_tokens",
                s.trained.placement,
                e.max_placement_self,
            );
            report.value("self.untrained_placement_tokens", s.untrained.placement);
            report.value("self.center_guess_placement_tokens", s.trained.center_guess);
            report.value("self.background_mse", s.trained.background_mse);
            report.value("self.scene_only_background_mse", s.scene_only_background);
            report.check(
                "self.background_ratio",
                s.trained.background_mse / s.scene_only_background,
                e.max_background_ratio_self,
            );
            report.value("self.motion_correlation", s.trained.correlation);
        }
    }
    if protocols.contains(&Protocol::CrossComposition) {
        let c = cross_composition(model, cfg)?;
        let self_bg = self_bg.expect("self-reconstruction ran");
        report.value("cross.cells", c.cells as f64);
        report.check(
            "cross.placement_tokens",
            c.scores.placement,
            e.max_placement_cross,
        );
        report.value("cross.center_guess_placement_tokens", c.scores.center_guess);
        report.value("cross.background_mse", c.scores.background_mse);
        report.check(
            "cross.background_ratio",
            c.scores.background_mse / self_bg,
            e.max_background_ratio_cross,
        );
        report.value("cross.motion_correlation", c.scores.correlation);
    }
    if protocols.contains(&Protocol::LongHorizon) {
        let l = long_horizon(model, cfg)?;
        for (i, (w, wo)) in l
            .drift_with_memory
            .iter()
            .zip(&l.drift_without_memory)
            .enumerate()
        {
            report.value(&format!("long.seed{i}.drift_with_memory"), *w);
            report.value(&format!("long.seed{i}.drift_without_memory"), *wo);
        }
        let wins = l
            .drift_with_memory
            .iter()
            .zip(&l.drift_without_memory)
            .filter(|(w, wo)| w < wo)
            .count();
        report.value("long.memory_wins", wins as f64);
        report.check(
            "long.memory_losses",
            (l.drift_with_memory.len() - wins) as f64,
            0.0,
        );
        report.check(
            "long.boundary_ratio",
            l.boundary_ratio,
            e.max_boundary_ratio,
        );
    }
    Ok(report)
}
