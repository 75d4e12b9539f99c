//! Training and validation clips: generation from a run config and a
//! checksummed on-disk form built on the checkpoint container.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scenecomp_core::conditioning::CanonicalMotionSequence;
use scenecomp_core::geometry::{
    BBox, CameraPose, PlacementTrack, PointCloud, RgbdFrame, RootTrajectory,
};
use scenecomp_core::toymodel::{Blob, Checkpoint};
use scenecomp_core::Scalar;

use crate::config::WorldConfig;
use crate::world::{
    generate_world_with, scene_clouds, MotionKind, PathKind, PathSpec, SpriteSpec, World,
    WorldSpec, BODY_HEIGHT, GROUND_Y, IDENTITIES,
};

const DATASET_VERSION: u64 = 1;
const MAX_TRIES: usize = 200;

/// `(identity, motion)` pairs left out of training so that cross-composition
/// sees unseen combinations.
pub fn heldout_pair(identity: usize, motion: usize) -> bool {
    (identity + motion) % 4 == 3
}

pub fn train_scene_seeds(cfg: &WorldConfig) -> Vec<u64> {
    (0..cfg.train_scenes as u64)
        .map(|i| cfg.scene_seed + i)
        .collect()
}

pub fn heldout_scene_seeds(cfg: &WorldConfig) -> Vec<u64> {
    let start = cfg.scene_seed + cfg.train_scenes as u64;
    (0..cfg.heldout_scenes as u64).map(|i| start + i).collect()
}

/// `WorldSpec` template with the layout fields filled from the config.
pub fn base_spec(cfg: &WorldConfig, scene_seed: u64) -> WorldSpec {
    WorldSpec {
        scene_seed,
        points: cfg.points,
        pillars: cfg.pillars,
        env_keep: cfg.env_keep,
        path: PathSpec {
            kind: PathKind::Orbit,
            amplitude: 0.0,
            lateral: 0.0,
        },
        frames: cfg.frames,
        sprite: SpriteSpec {
            identity: 0,
            motion: MotionKind::JumpingJack,
            joints: cfg.joints,
            period: 8.0,
            phase: 0.0,
            scale: 1.0,
        },
        root: [0.0, GROUND_Y - BODY_HEIGHT / 2.0, 3.0],
        velocity: [0.0; 3],
        image: cfg.image,
        patch: cfg.patch,
        canonical: cfg.canonical,
        focal: cfg.focal,
    }
}

/// Random camera path, placement, walk and motion phase around `base`.
pub fn randomize(base: &WorldSpec, kind: PathKind, rng: &mut ChaCha8Rng) -> WorldSpec {
    let mut spec = *base;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let amplitude = match kind {
        PathKind::Orbit | PathKind::LoopRevisit => sign * rng.random_range(0.1..0.3),
        PathKind::Dolly => rng.random_range(0.3..0.9),
    };
    let lateral = rng.random_range(-0.5..0.5);
    spec.path = PathSpec {
        kind,
        amplitude,
        lateral,
    };
    let z = rng.random_range(2.3..3.6);
    let x = lateral + rng.random_range(-0.3..0.3) * z;
    spec.root = [x, GROUND_Y - BODY_HEIGHT / 2.0, z];
    let speed = rng.random_range(0.0..0.1);
    let heading = rng.random_range(0.0..2.0 * PI);
    spec.velocity = [speed * heading.cos(), 0.0, speed * heading.sin()];
    spec.sprite.period = rng.random_range(6.0..10.0);
    spec.sprite.phase = rng.random_range(0.0..2.0 * PI);
    spec
}

/// Room clouds shared by all worlds with the same scene fields.
#[derive(Default)]
pub struct SceneCache {
    clouds: HashMap<u64, (PointCloud<f64>, PointCloud<f64>)>,
}

impl SceneCache {
    pub fn world(&mut self, spec: &WorldSpec) -> Result<World> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.clouds.entry(spec.scene_seed) {
            e.insert(scene_clouds(spec)?);
        }
        let (dense, sparse) = &self.clouds[&spec.scene_seed];
        generate_world_with(spec, dense.clone(), sparse.clone())
    }

    /// Draws randomized specs until the world passes the plausibility filter.
    pub fn plausible_world(
        &mut self,
        base: &WorldSpec,
        kind: PathKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<World> {
        for _ in 0..MAX_TRIES {
            let spec = randomize(base, kind, rng);
            let world = self.world(&spec)?;
            if world.plausible() {
                return Ok(world);
            }
        }
        bail!(
            "no plausible placement found for scene {} after {MAX_TRIES} tries",
            base.scene_seed
        )
    }
}

/// A clip in training precision with everything conditioning needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub spec: WorldSpec,
    pub poses: Vec<CameraPose<f64>>,
    pub track: PlacementTrack<f64>,
    pub motion: CanonicalMotionSequence<f32>,
    pub frames: Vec<RgbdFrame<f32>>,
    pub background: Vec<RgbdFrame<f32>>,
    pub env: Vec<RgbdFrame<f32>>,
    pub identity: Vec<RgbdFrame<f32>>,
    /// One frame per pose showing the room with the sprite half a clip away
    /// in time.
    pub memory: Vec<RgbdFrame<f32>>,
}

pub fn cast_frame<A: Scalar, B: Scalar>(f: &RgbdFrame<A>) -> RgbdFrame<B> {
    RgbdFrame {
        rgb: f.rgb.mapv(|v| B::lit(v.as_f64())),
        depth: f.depth.mapv(|v| B::lit(v.as_f64())),
        coverage: f.coverage.clone(),
    }
}

pub fn cast_track<A: Scalar, B: Scalar>(track: &PlacementTrack<A>) -> PlacementTrack<B> {
    PlacementTrack {
        grid: track.grid,
        boxes: track
            .boxes
            .iter()
            .map(|b| {
                b.map(|b| BBox {
                    t: b.t,
                    x1: b.x1,
                    y1: b.y1,
                    x2: b.x2,
                    y2: b.y2,
                    u: B::lit(b.u.as_f64()),
                    v: B::lit(b.v.as_f64()),
                    a: B::lit(b.a.as_f64()),
                })
            })
            .collect(),
    }
}

pub fn cast_motion<A: Scalar, B: Scalar>(
    m: &CanonicalMotionSequence<A>,
) -> CanonicalMotionSequence<B> {
    CanonicalMotionSequence {
        maps: m.maps.mapv(|v| B::lit(v.as_f64())),
        occupancy: m.occupancy,
        root: RootTrajectory {
            offsets: m
                .root
                .offsets
                .iter()
                .map(|o| o.map(|v| B::lit(v.as_f64())))
                .collect(),
            body_height: B::lit(m.root.body_height.as_f64()),
        },
    }
}

impl Clip {
    pub fn from_world(world: &World) -> Result<Self> {
        let t = world.frames_len();
        let memory = (0..t)
            .map(|v| {
                world
                    .render_displaced(v, (v + t / 2) % t)
                    .map(|f| cast_frame(&f))
            })
            .collect::<Result<_>>()?;
        let cast = |fs: &[RgbdFrame<f64>]| fs.iter().map(cast_frame).collect::<Vec<_>>();
        Ok(Self {
            spec: world.spec,
            poses: world.scene.poses.clone(),
            track: world.track.clone(),
            motion: cast_motion(&world.motion),
            frames: cast(&world.frames),
            background: cast(&world.background),
            env: cast(&world.env),
            identity: cast(&world.identity),
            memory,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: WorldConfig,
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
}

/// Generates training clips over the training rooms and non-held-out
/// sprite pairs, then validation clips from the same distribution.
pub fn generate_dataset(cfg: &WorldConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = SceneCache::default();
    let scenes = train_scene_seeds(cfg);
    let pairs: Vec<(usize, MotionKind)> = (0..IDENTITIES.len())
        .flat_map(|i| {
            MotionKind::ALL
                .iter()
                .enumerate()
                .map(move |(m, k)| (i, m, *k))
        })
        .filter(|(i, m, _)| !heldout_pair(*i, *m))
        .map(|(i, _, k)| (i, k))
        .collect();
    let mut draw = |n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Clip>> {
        (0..n)
            .map(|_| {
                let scene = scenes[rng.random_range(0..scenes.len())];
                let (identity, motion) = pairs[rng.random_range(0..pairs.len())];
                let kind = PathKind::ALL[rng.random_range(0..PathKind::ALL.len())];
                let mut base = base_spec(cfg, scene);
                base.sprite.identity = identity;
                base.sprite.motion = motion;
                Clip::from_world(&cache.plausible_world(&base, kind, rng)?)
            })
            .collect()
    };
    let train = draw(cfg.train_clips, &mut rng)?;
    let val = draw(cfg.val_clips, &mut rng)?;
    Ok(Dataset {
        world: cfg.clone(),
        train,
        val,
    })
}

#[derive(Serialize, Deserialize)]
struct ClipMeta {
    spec: WorldSpec,
    poses: Vec<[f64; 12]>,
    boxes: Vec<Option<[f64; 7]>>,
    root_offsets: Vec<[f64; 3]>,
    body_height: f64,
    occupancy: f64,
    motion_shape: [usize; 4],
    memory_frames: usize,
    identity_frames: usize,
}

/// `N x H x W x 5`: RGB, depth, coverage.
fn frames_blob(frames: &[RgbdFrame<f32>]) -> Blob {
    let mut vals = Vec::new();
    for f in frames {
        for ((y, x), d) in f.depth.indexed_iter() {
            vals.extend((0..3).map(|c| f.rgb[[y, x, c]]));
            vals.push(*d);
            vals.push(if f.coverage[[y, x]] { 1.0 } else { 0.0 });
        }
    }
    Blob::from_scalars(&vals)
}

fn frames_from_blob(blob: &Blob, n: usize, size: usize) -> Result<Vec<RgbdFrame<f32>>> {
    let vals: Vec<f32> = blob.to_scalars()?;
    ensure!(
        vals.len() == n * size * size * 5,
        "frame blob has {} values, expected {}",
        vals.len(),
        n * size * size * 5
    );
    let arr = Array4::from_shape_vec((n, size, size, 5), vals)?;
    Ok((0..n)
        .map(|i| RgbdFrame {
            rgb: Array3::from_shape_fn((size, size, 3), |(y, x, c)| arr[[i, y, x, c]]),
            depth: Array2::from_shape_fn((size, size), |(y, x)| arr[[i, y, x, 3]]),
            coverage: Array2::from_shape_fn((size, size), |(y, x)| arr[[i, y, x, 4]] != 0.0),
        })
        .collect())
}

fn pose_array(p: &CameraPose<f64>) -> [f64; 12] {
    let r = p.rotation;
    let t = p.translation;
    [
        r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2], t[0],
        t[1], t[2],
    ]
}

fn pose_from(a: &[f64; 12]) -> CameraPose<f64> {
    CameraPose {
        rotation: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
        translation: [a[9], a[10], a[11]],
    }
}

fn push_clip(ck: &mut Checkpoint, prefix: &str, clip: &Clip) {
    let meta = ClipMeta {
        spec: clip.spec,
        poses: clip.poses.iter().map(pose_array).collect(),
        boxes: clip
            .track
            .boxes
            .iter()
            .map(|b| {
                b.map(|b| {
                    [
                        b.x1 as f64,
                        b.y1 as f64,
                        b.x2 as f64,
                        b.y2 as f64,
                        b.u,
                        b.v,
                        b.a,
                    ]
                })
            })
            .collect(),
        root_offsets: clip
            .motion
            .root
            .offsets
            .iter()
            .map(|o| o.map(f64::from))
            .collect(),
        body_height: f64::from(clip.motion.root.body_height),
        occupancy: clip.motion.occupancy,
        motion_shape: clip.motion.maps.dim().into(),
        memory_frames: clip.memory.len(),
        identity_frames: clip.identity.len(),
    };
    let json = serde_json::to_vec(&meta).expect("clip metadata serializes");
    ck.push(format!("{prefix}.meta"), Blob::Bytes(json));
    ck.push(format!("{prefix}.frames"), frames_blob(&clip.frames));
    ck.push(
        format!("{prefix}.background"),
        frames_blob(&clip.background),
    );
    ck.push(format!("{prefix}.env"), frames_blob(&clip.env));
    ck.push(format!("{prefix}.identity"), frames_blob(&clip.identity));
    ck.push(format!("{prefix}.memory"), frames_blob(&clip.memory));
    let maps: Vec<f32> = clip.motion.maps.iter().copied().collect();
    ck.push(format!("{prefix}.motion"), Blob::from_scalars(&maps));
}

fn read_clip(ck: &Checkpoint, prefix: &str) -> Result<Clip> {
    let meta: ClipMeta = serde_json::from_slice(ck.bytes_of(&format!("{prefix}.meta"))?)
        .with_context(|| format!("{prefix}: bad clip metadata"))?;
    let t = meta.spec.frames;
    let n = meta.spec.image;
    let grid = meta.spec.grid();
    let frames =
        |name: &str, count: usize| frames_from_blob(ck.get(&format!("{prefix}.{name}"))?, count, n);
    let maps: Vec<f32> = ck.get(&format!("{prefix}.motion"))?.to_scalars()?;
    let s = meta.motion_shape;
    let maps = Array4::from_shape_vec((s[0], s[1], s[2], s[3]), maps)?;
    let motion = CanonicalMotionSequence {
        maps,
        occupancy: meta.occupancy,
        root: RootTrajectory {
            offsets: meta
                .root_offsets
                .iter()
                .map(|o| o.map(|v| v as f32))
                .collect(),
            body_height: meta.body_height as f32,
        },
    };
    let boxes = meta
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            b.map(|b| BBox {
                t: i,
                x1: b[0] as usize,
                y1: b[1] as usize,
                x2: b[2] as usize,
                y2: b[3] as usize,
                u: b[4],
                v: b[5],
                a: b[6],
            })
        })
        .collect();
    Ok(Clip {
        spec: meta.spec,
        poses: meta.poses.iter().map(pose_from).collect(),
        track: PlacementTrack { grid, boxes },
        motion,
        frames: frames("frames", t)?,
        background: frames("background", t)?,
        env: frames("env", t)?,
        identity: frames("identity", meta.identity_frames)?,
        memory: frames("memory", meta.memory_frames)?,
    })
}

impl Dataset {
    pub fn to_container(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            step: DATASET_VERSION,
            entries: Vec::new(),
        };
        let cfg = serde_json::to_vec(&self.world).expect("config serializes");
        ck.push("dataset.world", Blob::Bytes(cfg));
        let counts =
            serde_json::to_vec(&[self.train.len(), self.val.len()]).expect("counts serialize");
        ck.push("dataset.counts", Blob::Bytes(counts));
        for (i, c) in self.train.iter().enumerate() {
            push_clip(&mut ck, &format!("train.{i}"), c);
        }
        for (i, c) in self.val.iter().enumerate() {
            push_clip(&mut ck, &format!("val.{i}"), c);
        }
        ck
    }

    pub fn from_container(ck: &Checkpoint) -> Result<Self> {
        ensure!(
            ck.step == DATASET_VERSION,
            "dataset version {} is not supported",
            ck.step
        );
        let world: WorldConfig = serde_json::from_slice(ck.bytes_of("dataset.world")?)
            .context("dataset world config")?;
        let [n_train, n_val]: [usize; 2] =
            serde_json::from_slice(ck.bytes_of("dataset.counts")?).context("dataset counts")?;
        let train = (0..n_train)
            .map(|i| read_clip(ck, &format!("train.{i}")))
            .collect::<Result<_>>()?;
        let val = (0..n_val)
            .map(|i| read_clip(ck, &format!("val.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { world, train, val })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()
            .save(path)
            .with_context(|| format!("cannot write dataset {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)
            .with_context(|| format!("cannot read dataset {}", path.display()))?;
        Self::from_container(&ck)
    }

    /// Errors when the dataset was generated from a different world config.
    pub fn check_matches(&self, cfg: &WorldConfig) -> Result<()> {
        ensure!(
            &self.world == cfg,
            "dataset was generated with a different [world] section; rerun gen-data"
        );
        Ok(())
    }
}
