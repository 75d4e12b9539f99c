//! Random small model instances and a finite-difference gradient check.
#![allow(dead_code)]

use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenecomp_core::conditioning::{
    assemble_context, CanonicalMotionSequence, ConditionSet, ContextSequence, PatchEmbedding,
};
use scenecomp_core::flowmatch::{fm_loss_and_grad, LossRegion};
use scenecomp_core::geometry::{BBox, PlacementTrack, RgbdFrame, RootTrajectory, TokenGrid};
use scenecomp_core::nn::{normal_matrix, ParamSet};
use scenecomp_core::toymodel::{ModelConfig, ModelInput, MotionInput, ToyModel, Trainable};

pub struct Instance {
    pub z_t: Array4<f64>,
    pub t: f64,
    pub context: ContextSequence<f64>,
    pub motion: CanonicalMotionSequence<f64>,
    pub track: PlacementTrack<f64>,
    pub z_tgt: Array4<f64>,
    pub z1: Array4<f64>,
}

impl Instance {
    pub fn input(&self, with_motion: bool) -> ModelInput<'_, f64> {
        ModelInput {
            z_t: &self.z_t,
            t: self.t,
            context: &self.context,
            motion: with_motion.then_some(MotionInput {
                sequence: &self.motion,
                track: &self.track,
            }),
        }
    }
}

fn frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbdFrame<f64> {
    RgbdFrame {
        rgb: Array3::from_shape_simple_fn((h, w, 3), || rng.random_range(0.0..1.0)),
        depth: Array2::from_shape_simple_fn((h, w), || rng.random_range(0.0..1.0)),
        coverage: Array2::from_elem((h, w), true),
    }
}

/// `D = 8`, one head, two blocks, 6x6 pixels at patch 1, 3x3 canonical maps.
pub fn desk_check_config() -> ModelConfig {
    ModelConfig::new(8, 1, 2, 1, (3, 3), 4, 4, 2).unwrap()
}

pub fn instance(
    cfg: &ModelConfig,
    frames: usize,
    px: usize,
    global: bool,
    rng: &mut ChaCha8Rng,
) -> Instance {
    let grid = TokenGrid::from_pixels(px, px, cfg.patch).unwrap();
    let maps = Array4::from_shape_simple_fn(
        (
            frames,
            cfg.canonical_h,
            cfg.canonical_w,
            cfg.motion_channels,
        ),
        || rng.random_range(0.0..1.0),
    );
    let motion = CanonicalMotionSequence::new(
        maps,
        RootTrajectory::new(vec![[0.0; 3]; frames], 1.0).unwrap(),
    )
    .unwrap();
    let boxes = (0..frames)
        .map(|t| {
            let x1 = rng.random_range(0..grid.width - 1);
            let y1 = rng.random_range(0..grid.height - 1);
            let x2 = rng.random_range(x1 + 1..=grid.width);
            let y2 = rng.random_range(y1 + 1..=grid.height);
            Some(BBox::from_corners(t, x1, y1, x2, y2, &grid).unwrap())
        })
        .collect();
    let track = PlacementTrack { grid, boxes };
    let mask = Array3::from_shape_simple_fn((frames, px, px), || {
        if rng.random_bool(0.7) {
            1.0
        } else {
            0.0
        }
    });
    let cond = ConditionSet {
        env: (0..frames).map(|_| frame(rng, px, px)).collect(),
        motion: motion.clone(),
        identity: vec![frame(rng, px, px)],
        memory: Some(vec![frame(rng, px, px)]),
        mask,
        global_token: global
            .then(|| Array1::from_shape_simple_fn(cfg.dim, || rng.random_range(-1.0..1.0))),
    };
    let context = assemble_context(
        &cond,
        &PatchEmbedding::flatten(cfg.patch, cfg.latent_channels),
        &grid,
    )
    .unwrap();
    let dims = (frames, px, px, cfg.latent_channels);
    let mut r = || Array4::from_shape_simple_fn(dims, || rng.random_range(-1.0..1.0));
    Instance {
        z_t: r(),
        t: 0.37,
        context,
        motion,
        track,
        z_tgt: r(),
        z1: r(),
    }
}

/// Moves every trainable tensor off its initialization so each gradient
/// path is exercised.
pub fn perturb_trainable(model: &mut ToyModel<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    model.trainable.visit_mut("", &mut |_, p| {
        for v in p.iter_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    });
}

pub fn loss(model: &ToyModel<f64>, inst: &Instance) -> f64 {
    let v = model.predict(&inst.input(true)).unwrap();
    fm_loss_and_grad(
        &v.view(),
        &inst.z_tgt.view(),
        &inst.z1.view(),
        &LossRegion::All,
    )
    .unwrap()
    .0
}

pub fn analytic_grad(model: &ToyModel<f64>, inst: &Instance) -> Trainable<f64> {
    let (v, cache) = model.forward(&inst.input(true)).unwrap();
    let (_, g) = fm_loss_and_grad(
        &v.view(),
        &inst.z_tgt.view(),
        &inst.z1.view(),
        &LossRegion::All,
    )
    .unwrap();
    model.backward(&cache, &g).unwrap()
}

/// Per-tensor `|analytic - numeric| / (|analytic| + |numeric|)` in the
/// Euclidean norm, using central differences with step `h`.
pub fn gradient_check(model: &ToyModel<f64>, inst: &Instance, h: f64) -> Vec<(String, f64)> {
    let grad = analytic_grad(model, inst);
    let mut analytic = Vec::new();
    grad.visit("", &mut |name, g| analytic.push((name, g.to_vec())));
    let mut out = Vec::new();
    for (idx, (name, ga)) in analytic.iter().enumerate() {
        let mut num = vec![0.0; ga.len()];
        for (j, slot) in num.iter_mut().enumerate() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let mut i = 0;
                m.trainable.visit_mut("", &mut |_, p| {
                    if i == idx {
                        p[j] += delta;
                    }
                    i += 1;
                });
                loss(&m, inst)
            };
            *slot = (eval(h) - eval(-h)) / (2.0 * h);
        }
        let diff: f64 = ga
            .iter()
            .zip(&num)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = ga.iter().map(|a| a * a).sum::<f64>().sqrt()
            + num.iter().map(|n| n * n).sum::<f64>().sqrt();
        out.push((name.clone(), if scale == 0.0 { 0.0 } else { diff / scale }));
    }
    out
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    normal_matrix(rng, r, c, 1.0)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
