mod oracle;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenecomp_core::conditioning::*;
use scenecomp_core::geometry::{
    BBox, CameraPose, PlacementTrack, RgbdFrame, RootTrajectory, TokenGrid,
};
use scenecomp_core::nn::{multi_head_attention, normal_matrix, Linear};
use scenecomp_core::rope::{RopeConfig, RopeTable};

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbdFrame<f64> {
    RgbdFrame {
        rgb: Array3::from_shape_simple_fn((h, w, 3), || rng.random_range(0.0..1.0)),
        depth: Array2::from_shape_simple_fn((h, w), || rng.random_range(0.0..1.0)),
        coverage: Array2::from_elem((h, w), true),
    }
}

fn still_motion(
    frames: usize,
    hc: usize,
    wc: usize,
    c: usize,
    rng: &mut ChaCha8Rng,
) -> CanonicalMotionSequence<f64> {
    let maps = Array4::from_shape_simple_fn((frames, hc, wc, c), || rng.random_range(0.0..1.0));
    let root = RootTrajectory::new(vec![[0.0; 3]; frames], 1.0).unwrap();
    CanonicalMotionSequence::new(maps, root).unwrap()
}

fn randomized_weights(
    rng: &mut ChaCha8Rng,
    d: usize,
    c: usize,
    heads: usize,
) -> MotionAttention<f64> {
    let mut w = MotionAttention::new(rng, d, c, heads).unwrap();
    w.output = Linear::random(rng, d, d);
    w.norm_gamma = Array1::from_shape_simple_fn(d, || rng.random_range(0.5..1.5));
    w.norm_beta = Array1::from_shape_simple_fn(d, || rng.random_range(-0.2..0.2));
    for l in [
        &mut w.embed,
        &mut w.query,
        &mut w.key,
        &mut w.value,
        &mut w.output,
    ] {
        l.bias = Array1::from_shape_simple_fn(l.output_dim(), || rng.random_range(-0.1..0.1));
    }
    w
}

fn random_track(
    rng: &mut ChaCha8Rng,
    frames: usize,
    grid: TokenGrid,
    allow_absent: bool,
) -> PlacementTrack<f64> {
    let boxes = (0..frames)
        .map(|t| {
            if allow_absent && rng.random_bool(0.25) {
                return None;
            }
            let x1 = rng.random_range(0..grid.width);
            let y1 = rng.random_range(0..grid.height);
            let x2 = rng.random_range(x1 + 1..=grid.width);
            let y2 = rng.random_range(y1 + 1..=grid.height);
            Some(BBox::from_corners(t, x1, y1, x2, y2, &grid).unwrap())
        })
        .collect();
    PlacementTrack { grid, boxes }
}

fn token_boxes(track: &PlacementTrack<f64>) -> Vec<Option<oracle::TokenBox>> {
    track
        .boxes
        .iter()
        .map(|b| b.map(|b| (b.x1, b.y1, b.x2, b.y2)))
        .collect()
}

#[test]
fn encode_zero_frames_gives_zero_tokens() {
    let grid = TokenGrid::from_pixels(4, 4, 2).unwrap();
    let frames = Array4::<f64>::zeros((2, 4, 4, 3));
    let mut emb = PatchEmbedding::new(
        2,
        3,
        Linear::random(&mut ChaCha8Rng::seed_from_u64(0), 12, 5),
    )
    .unwrap();
    emb.linear.bias.fill(0.0);
    let tok = encode_segment(&frames.view(), &emb, &grid).unwrap();
    assert_eq!(tok.dim(), (2, 2, 2, 5));
    assert!(tok.iter().all(|v| *v == 0.0));
}

#[test]
fn identity_embedding_on_unit_patches_copies_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = TokenGrid::from_pixels(3, 2, 1).unwrap();
    let frames = Array4::from_shape_simple_fn((2, 2, 3, 4), || rng.random_range(-1.0..1.0));
    let tok = encode_segment(&frames.view(), &PatchEmbedding::flatten(1, 4), &grid).unwrap();
    assert_eq!(tok, frames);
}

#[test]
fn patch_mean_embedding_matches_direct_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = TokenGrid::from_pixels(6, 4, 2).unwrap();
    let frames = Array4::from_shape_simple_fn((3, 4, 6, 4), || rng.random_range(-1.0..1.0));
    let tok = encode_segment(&frames.view(), &PatchEmbedding::mean(2, 4), &grid).unwrap();
    let want = oracle::patch_means(&frames, 2);
    for (a, b) in tok.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn encode_rejects_wrong_resolution() {
    let grid = TokenGrid::from_pixels(4, 4, 2).unwrap();
    let frames = Array4::<f64>::zeros((1, 6, 4, 4));
    assert!(encode_segment(&frames.view(), &PatchEmbedding::flatten(2, 4), &grid).is_err());
    let empty = Array4::<f64>::zeros((0, 4, 4, 4));
    assert!(encode_segment(&empty.view(), &PatchEmbedding::flatten(2, 4), &grid).is_err());
}

#[test]
fn patchify_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = Array4::from_shape_simple_fn((2, 4, 6, 3), || rng.random_range(-1.0..1.0));
    let p = patchify(&frames.view(), 2).unwrap();
    assert_eq!(p.dim(), (2, 2, 3, 12));
    assert_eq!(unpatchify(&p.view(), 2, 3).unwrap(), frames);
    assert!(patchify(&frames.view(), 4).is_err());
}

fn condition_set(
    rng: &mut ChaCha8Rng,
    t: usize,
    ids: usize,
    mem: Option<usize>,
    px: usize,
) -> ConditionSet<f64> {
    ConditionSet {
        env: (0..t).map(|_| random_frame(rng, px, px)).collect(),
        motion: still_motion(t, 2, 2, 4, rng),
        identity: (0..ids).map(|_| random_frame(rng, px, px)).collect(),
        memory: mem.map(|m| (0..m).map(|_| random_frame(rng, px, px)).collect()),
        mask: Array3::ones((t, px, px)),
        global_token: None,
    }
}

#[test]
fn context_without_memory_has_env_and_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = TokenGrid::from_pixels(4, 4, 2).unwrap();
    let cond = condition_set(&mut rng, 3, 2, None, 4);
    let ctx = assemble_context(&cond, &PatchEmbedding::flatten(2, 4), &grid).unwrap();
    assert_eq!(ctx.len(), 5);
    assert_eq!(
        ctx.labels,
        vec![
            Segment::Env,
            Segment::Env,
            Segment::Env,
            Segment::Identity,
            Segment::Identity
        ]
    );
    assert_eq!(ctx.channels(), 17);
    for (t, label) in ctx.labels.iter().enumerate() {
        let want = if *label == Segment::Env { 1.0 } else { 0.0 };
        assert!(ctx
            .tokens
            .index_axis(Axis(0), t)
            .index_axis(Axis(2), 16)
            .iter()
            .all(|m| *m == want));
    }
}

#[test]
fn env_only_context_is_env_tokens_plus_ones() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = TokenGrid::from_pixels(4, 4, 2).unwrap();
    let cond = condition_set(&mut rng, 2, 0, None, 4);
    let emb = PatchEmbedding::flatten(2, 4);
    let ctx = assemble_context(&cond, &emb, &grid).unwrap();
    let env = encode_segment(&frames_to_latent(&cond.env).unwrap().view(), &emb, &grid).unwrap();
    assert_eq!(ctx.tokens.slice(ndarray::s![.., .., .., ..16]), env);
    assert!(ctx
        .tokens
        .slice(ndarray::s![.., .., .., 16])
        .iter()
        .all(|m| *m == 1.0));
}

#[test]
fn token_mask_is_patch_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = TokenGrid::from_pixels(4, 4, 2).unwrap();
    let mut cond = condition_set(&mut rng, 1, 1, Some(1), 4);
    cond.mask.fill(0.0);
    cond.mask[[0, 3, 0]] = 1.0;
    let ctx = assemble_context(&cond, &PatchEmbedding::flatten(2, 4), &grid).unwrap();
    let m = ctx.tokens.slice(ndarray::s![0, .., .., 16]);
    assert_eq!(m, ndarray::arr2(&[[0.0, 0.0], [1.0, 0.0]]));
    assert_eq!(ctx.segment_lengths()[2], (Segment::Memory, 1));
}

#[test]
fn condition_set_rejects_bad_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cond = condition_set(&mut rng, 2, 1, None, 4);
    cond.mask[[0, 0, 0]] = 0.5;
    assert!(cond.validate().is_err());
    let mut cond = condition_set(&mut rng, 2, 1, None, 4);
    cond.mask = Array3::ones((3, 4, 4));
    assert!(cond.validate().is_err());
}

#[test]
fn context_serialization_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = TokenGrid::from_pixels(4, 4, 2).unwrap();
    let mut cond = condition_set(&mut rng, 2, 2, Some(3), 4);
    cond.global_token = Some(Array1::from(vec![0.25, -0.5]));
    let ctx = assemble_context(&cond, &PatchEmbedding::flatten(2, 4), &grid).unwrap();
    let back = ContextSequence::<f64>::from_raw(&ctx.to_raw(), &ctx.sidecar()).unwrap();
    assert_eq!(back.labels, ctx.labels);
    assert_eq!(back.global_token, ctx.global_token);
    for (a, b) in back.tokens.iter().zip(ctx.tokens.iter()) {
        assert_eq!(*a, (*b as f32) as f64);
    }
    assert!(ContextSequence::<f64>::from_raw(&ctx.to_raw(), "{}").is_err());
}

#[test]
fn motion_serialization_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = still_motion(3, 2, 2, 4, &mut rng);
    m.root.offsets[2] = [0.5, 0.0, -0.25];
    let back = CanonicalMotionSequence::<f64>::from_raw(&m.to_raw(), &m.sidecar()).unwrap();
    assert_eq!(back.root, m.root);
    assert_eq!(back.occupancy, 0.9);
    assert!(back
        .maps
        .iter()
        .zip(m.maps.iter())
        .all(|(a, b)| *a == (*b as f32) as f64));
}

#[test]
fn motion_maps_must_be_unit_range() {
    let maps = Array4::from_elem((1, 2, 2, 4), 1.5);
    let root = RootTrajectory::new(vec![[0.0; 3]], 1.0).unwrap();
    assert!(CanonicalMotionSequence::new(maps, root).is_err());
}

#[test]
fn single_motion_token_returns_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = TokenGrid::from_pixels(3, 3, 1).unwrap();
    let cfg = RopeConfig::new(8).unwrap();
    let w = randomized_weights(&mut rng, 16, 4, 2);
    let motion = still_motion(2, 1, 1, 4, &mut rng);
    let track = random_track(&mut rng, 2, grid, true);
    let q = Array4::from_shape_simple_fn((2, 3, 3, 16), || rng.random_range(-1.0..1.0));
    let out =
        motion_cross_attention(&q, &motion, &track, &cfg, &w, MotionOptions::default()).unwrap();
    for t in 0..2 {
        let u = motion
            .maps
            .slice(ndarray::s![t, 0, 0, ..])
            .to_owned()
            .insert_axis(Axis(0));
        let v = w.value.forward(&w.embed.forward(&u.view()).view());
        let want = w.output.forward(&v.view());
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..16 {
                    assert!((out[[t, y, x, c]] - want[[0, c]]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_motion_gives_zero_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = TokenGrid::from_pixels(3, 3, 1).unwrap();
    let cfg = RopeConfig::new(8).unwrap();
    let mut w = randomized_weights(&mut rng, 16, 4, 2);
    w.embed.bias.fill(0.0);
    w.value.bias.fill(0.0);
    w.output.bias.fill(0.0);
    let mut motion = still_motion(2, 2, 2, 4, &mut rng);
    motion.maps.fill(0.0);
    let track = random_track(&mut rng, 2, grid, false);
    let q = Array4::from_shape_simple_fn((2, 3, 3, 16), || rng.random_range(-1.0..1.0));
    let out =
        motion_cross_attention(&q, &motion, &track, &cfg, &w, MotionOptions::default()).unwrap();
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn cross_attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let grid = TokenGrid::from_pixels(3, 3, 1).unwrap();
    for hard_mask in [false, true] {
        for _ in 0..10 {
            let cfg = RopeConfig::new(8).unwrap();
            let w = randomized_weights(&mut rng, 16, 4, 2);
            let motion = still_motion(2, 2, 2, 4, &mut rng);
            let track = random_track(&mut rng, 2, grid, true);
            let q = Array4::from_shape_simple_fn((2, 3, 3, 16), || rng.random_range(-1.0..1.0));
            let opts = MotionOptions { hard_mask };
            let out = motion_cross_attention(&q, &motion, &track, &cfg, &w, opts).unwrap();
            let x = q.clone().into_shape_with_order((18, 16)).unwrap();
            let want = oracle::cross_attention(
                &x,
                &motion.tokens(),
                &w,
                &token_boxes(&track),
                (3, 3),
                (2, 2),
                &cfg,
                hard_mask,
            );
            let flat = out.into_shape_with_order((18, 16)).unwrap();
            for (r, row) in want.out.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    assert!((flat[[r, c]] - v).abs() < 1e-6, "row {r} col {c}");
                }
            }
        }
    }
}

#[test]
fn cross_attention_reports_frame_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let grid = TokenGrid::from_pixels(3, 3, 1).unwrap();
    let cfg = RopeConfig::new(8).unwrap();
    let w = randomized_weights(&mut rng, 16, 4, 2);
    let motion = still_motion(3, 2, 2, 4, &mut rng);
    let track = random_track(&mut rng, 2, grid, false);
    let q = Array4::zeros((2, 3, 3, 16));
    assert!(
        motion_cross_attention(&q, &motion, &track, &cfg, &w, MotionOptions::default()).is_err()
    );
}

#[test]
fn hard_mask_silences_frames_without_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let grid = TokenGrid::from_pixels(3, 3, 1).unwrap();
    let cfg = RopeConfig::new(8).unwrap();
    let w = randomized_weights(&mut rng, 16, 4, 2);
    let motion = still_motion(1, 2, 2, 4, &mut rng);
    let track = PlacementTrack {
        grid,
        boxes: vec![None],
    };
    let q = Array4::from_shape_simple_fn((1, 3, 3, 16), || rng.random_range(-1.0..1.0));
    let out = motion_cross_attention(
        &q,
        &motion,
        &track,
        &cfg,
        &w,
        MotionOptions { hard_mask: true },
    )
    .unwrap();
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn memory_evicts_oldest() {
    let bank = MemoryBank::<f64>::new(2).unwrap();
    let f = Array3::zeros((2, 2, 4));
    let bank = update_memory(bank, f.clone(), CameraPose::identity(), 0);
    let bank = update_memory(bank, f.clone(), CameraPose::identity(), 1);
    let bank = update_memory(bank, f, CameraPose::identity(), 2);
    assert_eq!(bank.len(), 2);
    assert_eq!(
        bank.entries().iter().map(|e| e.step).collect::<Vec<_>>(),
        vec![1, 2]
    );
    assert!(MemoryBank::<f64>::new(0).is_err());
}

fn orbit_pose(angle: f64) -> CameraPose<f64> {
    let eye = [4.0 * angle.sin(), -1.0, -4.0 * angle.cos()];
    CameraPose::look_at(eye, [0.0, 0.0, 0.0], [0.0, 1.0, 0.0])
}

#[test]
fn retrieval_finds_identical_pose_first() {
    let mut bank = MemoryBank::<f64>::new(8).unwrap();
    for (i, a) in [0.0, 0.5, 1.0, 1.5].iter().enumerate() {
        bank.push(
            Array3::from_elem((1, 1, 1), i as f64),
            orbit_pose(*a),
            i as u64,
        );
    }
    let got = retrieve_memory(&bank, &orbit_pose(1.0), 2, 1.0);
    assert_eq!(got[0].step, 2);
    assert_eq!(got.len(), 2);
    let empty = MemoryBank::<f64>::new(2).unwrap();
    assert!(retrieve_memory(&empty, &orbit_pose(0.0), 3, 1.0).is_empty());
}

#[test]
fn opposed_axes_score_zero() {
    let a = orbit_pose(0.0);
    let b = orbit_pose(std::f64::consts::PI);
    assert_eq!(viewpoint_similarity(&a, &b, 1.0), 0.0);
    assert!((viewpoint_similarity(&a, &a, 1.0) - 1.0).abs() < 1e-12);
}

#[test]
fn retrieval_matches_exhaustive_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut bank = MemoryBank::<f64>::new(5).unwrap();
    let angles: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    for (i, a) in angles.iter().enumerate() {
        bank.push(Array3::zeros((1, 1, 1)), orbit_pose(*a), i as u64);
    }
    let query = orbit_pose(0.3);
    let sigma = 1.5;
    // brute force: score with hand formulas, then pick the best repeatedly
    let mut scored: Vec<(f64, u64)> = angles
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let ca = [4.0 * a.sin(), -1.0, -4.0 * a.cos()];
            let cb = [4.0 * 0.3f64.sin(), -1.0, -4.0 * 0.3f64.cos()];
            let dist = ((ca[0] - cb[0]).powi(2) + (ca[2] - cb[2]).powi(2)).sqrt();
            let na = (ca[0].powi(2) + 1.0 + ca[2].powi(2)).sqrt();
            let nb = (cb[0].powi(2) + 1.0 + cb[2].powi(2)).sqrt();
            let cos = (ca[0] * cb[0] + 1.0 + ca[2] * cb[2]) / (na * nb);
            ((-dist / sigma).exp() * cos.max(0.0), i as u64)
        })
        .collect();
    let mut want = Vec::new();
    while !scored.is_empty() {
        let mut best = 0;
        for j in 1..scored.len() {
            if scored[j].0 > scored[best].0 + 1e-12 {
                best = j;
            }
        }
        want.push(scored.remove(best).1);
    }
    let got: Vec<u64> = retrieve_memory(&bank, &query, 5, sigma)
        .iter()
        .map(|e| e.step)
        .collect();
    assert_eq!(got, want);
}

#[test]
fn retrieval_ties_prefer_earlier_steps() {
    let mut bank = MemoryBank::<f64>::new(4).unwrap();
    for s in [3, 1, 2] {
        bank.push(Array3::zeros((1, 1, 1)), orbit_pose(0.0), s);
    }
    let got: Vec<u64> = retrieve_memory(&bank, &orbit_pose(0.0), 3, 1.0)
        .iter()
        .map(|e| e.step)
        .collect();
    assert_eq!(got, vec![1, 2, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TokenGrid::from_pixels(4, 3, 1).unwrap();
        let w = randomized_weights(&mut rng, 16, 4, 2);
        let motion = still_motion(2, 3, 2, 4, &mut rng);
        let track = random_track(&mut rng, 2, grid, true);
        let cfg = RopeConfig::new(8).unwrap();
        let geo = MotionGeometry::new(&track, 3, 2, &cfg).unwrap();
        let x = normal_matrix::<f64, _>(&mut rng, 24, 16, 1.0);
        let (_, cache) = w.forward(&x.view(), &motion.tokens().view(), &geo, MotionOptions::default()).unwrap();
        for t in 0..2 {
            for p in cache.probabilities(t) {
                for row in p.axis_iter(Axis(0)) {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn joint_key_permutation_is_invisible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = RopeConfig::new(8).unwrap();
        let q = normal_matrix::<f64, _>(&mut rng, 5, 16, 1.0);
        let k = normal_matrix::<f64, _>(&mut rng, 6, 16, 1.0);
        let v = normal_matrix::<f64, _>(&mut rng, 6, 16, 1.0);
        let pos: Vec<[f64; 3]> = (0..6).map(|i| [0.0, (i % 3) as f64, (i / 3) as f64]).collect();
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let rot = |k: &Array2<f64>, pos: &[[f64; 3]]| {
            let mut k = k.clone();
            RopeTable::new(pos, &cfg).rotate(&mut k);
            k
        };
        let (a, _) = multi_head_attention(&q.view(), &rot(&k, &pos).view(), &v.view(), 2, None);
        let kp = k.select(Axis(0), &perm);
        let vp = v.select(Axis(0), &perm);
        let pp: Vec<[f64; 3]> = perm.iter().map(|i| pos[*i]).collect();
        let (b, _) = multi_head_attention(&q.view(), &rot(&kp, &pp).view(), &vp.view(), 2, None);
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn boxless_frame_treats_queries_alike(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TokenGrid::from_pixels(3, 3, 1).unwrap();
        let w = randomized_weights(&mut rng, 16, 4, 2);
        let motion = still_motion(1, 2, 2, 4, &mut rng);
        let track = PlacementTrack { grid, boxes: vec![None] };
        let cfg = RopeConfig::new(8).unwrap();
        let token: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = Array4::from_shape_fn((1, 3, 3, 16), |(_, _, _, c)| token[c]);
        let out = motion_cross_attention(&q, &motion, &track, &cfg, &w, MotionOptions::default()).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..16 {
                    prop_assert_eq!(out[[0, y, x, c]], out[[0, 0, 0, c]]);
                }
            }
        }
    }

    #[test]
    fn context_lengths_are_recoverable(t in 1usize..4, ids in 0usize..3, mem in proptest::option::of(0usize..3), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = TokenGrid::from_pixels(2, 2, 1).unwrap();
        let cond = condition_set(&mut rng, t, ids, mem, 2);
        let ctx = assemble_context(&cond, &PatchEmbedding::flatten(1, 4), &grid).unwrap();
        let back = ContextSequence::<f64>::from_raw(&ctx.to_raw(), &ctx.sidecar()).unwrap();
        let lens = back.segment_lengths();
        prop_assert_eq!(lens[0].1, t);
        prop_assert_eq!(lens[1].1, ids);
        prop_assert_eq!(lens[2].1, mem.unwrap_or(0));
        prop_assert_eq!(back.len(), t + ids + mem.unwrap_or(0));
    }

    #[test]
    fn memory_never_exceeds_capacity(cap in 1usize..5, steps in proptest::collection::vec(0u64..20, 0..12)) {
        let mut bank = MemoryBank::<f64>::new(cap).unwrap();
        for s in steps {
            bank.push(Array3::zeros((1, 1, 1)), CameraPose::identity(), s);
            prop_assert!(bank.len() <= cap);
            prop_assert!(bank.entries().windows(2).all(|w| w[0].step <= w[1].step));
        }
    }
}
