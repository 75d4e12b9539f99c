//! Synthetic human-in-scene worlds.
//!
//! A world is a point-cloud room seen along a camera path, with a
//! stick-figure sprite walking through it. Ground truth is the dense room
//! render with the sprite, drawn from the same canonical pose as its motion
//! map, alpha-composited inside each frame's placement box.

mod scene;
mod sprite;

pub use scene::{
    build_room, camera_path, subsample, PathKind, PathSpec, GROUND_Y, LOOK_TARGET, WALL_Z,
};
pub use sprite::{phase_at, Figure, Identity, MotionKind, Part, PlacedFigure, IDENTITIES};

use anyhow::{bail, ensure, Result};
use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use scenecomp_core::conditioning::{frames_to_latent, CanonicalMotionSequence};
use scenecomp_core::flowmatch::{LatentRole, LatentVideo};
use scenecomp_core::geometry::{
    backproject_bbox_center, estimate_root_depth, project_point_cloud, project_root,
    propagate_and_project, BBox, CameraIntrinsics, CameraPose, PlacementTrack, PointCloud,
    RgbdFrame, RootTrajectory, TokenGrid, Vec3, Z_NEAR,
};

/// Body height in world units.
pub const BODY_HEIGHT: f64 = 1.2;
/// Joint heatmap width in box units.
const JOINT_SIGMA: f64 = 0.1;
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub identity: usize,
    pub motion: MotionKind,
    /// Joint heatmap channels (1 to 3: head, left hand, right hand); the
    /// motion map has one more channel for the silhouette.
    pub joints: usize,
    /// Frames per motion cycle.
    pub period: f64,
    pub phase: f64,
    /// Multiplies the body's box occupancy; 0 hides the sprite.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub scene_seed: u64,
    pub points: usize,
    pub pillars: usize,
    /// Fraction of points kept in the sparse environment cloud.
    pub env_keep: f64,
    pub path: PathSpec,
    pub frames: usize,
    pub sprite: SpriteSpec,
    /// Frame-0 body center in world coordinates.
    pub root: Vec3<f64>,
    /// Per-frame root displacement along the floor, world coordinates.
    pub velocity: Vec3<f64>,
    pub image: usize,
    pub patch: usize,
    pub canonical: usize,
    pub focal: f64,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.frames >= 1, "a world needs at least one frame");
        ensure!(
            self.points >= 16,
            "point count {} is too small",
            self.points
        );
        ensure!(
            self.env_keep > 0.0 && self.env_keep <= 1.0,
            "env_keep must lie in (0, 1], got {}",
            self.env_keep
        );
        ensure!(
            self.image > 0 && self.patch > 0 && self.image.is_multiple_of(self.patch),
            "image size {} is not a multiple of patch {}",
            self.image,
            self.patch
        );
        ensure!(self.canonical >= 1, "canonical size must be positive");
        ensure!(self.focal > 0.0, "focal length must be positive");
        ensure!(
            self.sprite.identity < IDENTITIES.len(),
            "unknown identity {}",
            self.sprite.identity
        );
        ensure!(
            (1..=3).contains(&self.sprite.joints),
            "sprite joint count must be 1 to 3, got {}",
            self.sprite.joints
        );
        ensure!(self.sprite.period > 0.0, "motion period must be positive");
        ensure!(self.sprite.scale >= 0.0, "sprite scale must be nonnegative");
        Ok(())
    }

    pub fn grid(&self) -> TokenGrid {
        TokenGrid::from_pixels(self.image, self.image, self.patch).expect("validated image size")
    }

    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        let c = self.image as f64 / 2.0;
        CameraIntrinsics::new(self.focal, c, c, self.image, self.image)
            .expect("validated intrinsics")
    }

    pub fn motion_channels(&self) -> usize {
        self.sprite.joints + 1
    }
}

/// Point clouds, intrinsics and per-frame extrinsics of a world.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePackage {
    pub dense: PointCloud<f64>,
    pub sparse: PointCloud<f64>,
    pub intrinsics: CameraIntrinsics<f64>,
    pub poses: Vec<CameraPose<f64>>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub scene: ScenePackage,
    pub motion: CanonicalMotionSequence<f64>,
    pub track: PlacementTrack<f64>,
    pub ground_truth: LatentVideo<f64>,
    /// Ground-truth frames in `[0, 1]`.
    pub frames: Vec<RgbdFrame<f64>>,
    /// Dense render without the sprite.
    pub background: Vec<RgbdFrame<f64>>,
    /// Sparse render: the environment condition.
    pub env: Vec<RgbdFrame<f64>>,
    /// Full-body reference and face crop.
    pub identity: Vec<RgbdFrame<f64>>,
    figures: Vec<PlacedFigure>,
    roots: Vec<Vec3<f64>>,
}

/// Room clouds depend only on the scene fields, so callers may share them.
pub fn scene_clouds(spec: &WorldSpec) -> Result<(PointCloud<f64>, PointCloud<f64>)> {
    let dense = build_room(spec.scene_seed, spec.points, spec.pillars)?;
    let sparse = subsample(&dense, spec.env_keep, spec.scene_seed ^ 0x5eed_c10d)?;
    Ok((dense, sparse))
}

pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let (dense, sparse) = scene_clouds(spec)?;
    generate_world_with(spec, dense, sparse)
}

/// [`generate_world`] with precomputed room clouds.
pub fn generate_world_with(
    spec: &WorldSpec,
    dense: PointCloud<f64>,
    sparse: PointCloud<f64>,
) -> Result<World> {
    spec.validate()?;
    let intr = spec.intrinsics();
    let grid = spec.grid();
    let poses = camera_path(&spec.path, spec.frames);

    let r0 = poses[0].rotation;
    let offsets: Vec<Vec3<f64>> = (0..spec.frames)
        .map(|t| {
            let w = spec.velocity.map(|v| v * t as f64);
            [0, 1, 2].map(|i| r0[i][0] * w[0] + r0[i][1] * w[1] + r0[i][2] * w[2])
        })
        .collect();
    let traj = RootTrajectory::new(offsets, BODY_HEIGHT)?;
    let p_cam = poses[0].transform(&spec.root);
    let Some(first) = project_root(&p_cam, &poses[0], &poses[0], &intr, BODY_HEIGHT) else {
        bail!("sprite root is behind the first camera");
    };
    let bbox0 = BBox::from_center(0, first.u, first.v, first.a, &grid)?;
    let z0 = estimate_root_depth(BODY_HEIGHT, bbox0.a, &intr)?;
    let p0 = backproject_bbox_center(&bbox0, z0, &intr)?;
    let track = propagate_and_project(&p0, &traj, &poses, &intr, &grid)?;
    let roots = traj.absolute(&p0);

    let id = IDENTITIES[spec.sprite.identity];
    let figures: Vec<PlacedFigure> = (0..spec.frames)
        .map(|t| {
            let phase = phase_at(t, spec.sprite.period, spec.sprite.phase);
            PlacedFigure::new(Figure::posed(spec.sprite.motion, phase), spec.sprite.scale)
        })
        .collect();

    let mut background = Vec::with_capacity(spec.frames);
    let mut env = Vec::with_capacity(spec.frames);
    let mut frames = Vec::with_capacity(spec.frames);
    for (t, pose) in poses.iter().enumerate() {
        let bg = project_point_cloud(&dense, pose, &intr)?;
        env.push(project_point_cloud(&sparse, pose, &intr)?);
        let mut gt = bg.clone();
        if let Some(b) = track.get(t) {
            let depth = project_root(&roots[t], &poses[0], pose, &intr, BODY_HEIGHT)
                .map_or(Z_NEAR, |p| p.depth);
            composite(&mut gt, b, depth, &figures[t], &id, grid.patch);
        }
        background.push(bg);
        frames.push(gt);
    }

    let maps = motion_maps(&figures, spec.canonical, spec.sprite.joints);
    let motion = CanonicalMotionSequence::new(maps, traj)?;
    let latent = frames_to_latent(&frames)?;
    let identity = identity_frames(spec, &id);
    Ok(World {
        spec: *spec,
        scene: ScenePackage {
            dense,
            sparse,
            intrinsics: intr,
            poses,
        },
        motion,
        track,
        ground_truth: LatentVideo::new(latent, LatentRole::Clean)?,
        frames,
        background,
        env,
        identity,
        figures,
        roots,
    })
}

/// Alpha-composites `fig` over `frame` inside the pixel rectangle of `b`.
pub fn composite(
    frame: &mut RgbdFrame<f64>,
    b: &BBox<f64>,
    depth: f64,
    fig: &PlacedFigure,
    id: &Identity,
    patch: usize,
) {
    if fig.is_empty() {
        return;
    }
    let (px0, py0) = (b.x1 * patch, b.y1 * patch);
    let (pw, ph) = ((b.x2 - b.x1) * patch, (b.y2 - b.y1) * patch);
    let d = (Z_NEAR / depth).clamp(0.0, 1.0);
    for y in 0..ph {
        for x in 0..pw {
            let (alpha, col) = fig.cell(
                x as f64 / pw as f64,
                (x + 1) as f64 / pw as f64,
                y as f64 / ph as f64,
                (y + 1) as f64 / ph as f64,
                SUPERSAMPLE,
                id,
            );
            if alpha == 0.0 {
                continue;
            }
            let (yy, xx) = (py0 + y, px0 + x);
            for c in 0..3 {
                let v = &mut frame.rgb[[yy, xx, c]];
                *v = alpha * col[c] + (1.0 - alpha) * *v;
            }
            let dv = &mut frame.depth[[yy, xx]];
            *dv = alpha * d + (1.0 - alpha) * *dv;
            frame.coverage[[yy, xx]] = true;
        }
    }
}

/// `T x n x n x (joints + 1)`: joint heatmaps then silhouette coverage.
fn motion_maps(figures: &[PlacedFigure], n: usize, joints: usize) -> Array4<f64> {
    let mut maps = Array4::zeros((figures.len(), n, n, joints + 1));
    let dummy = IDENTITIES[0];
    for (t, fig) in figures.iter().enumerate() {
        if fig.is_empty() {
            continue;
        }
        let js = fig.joints();
        for y in 0..n {
            for x in 0..n {
                let (cx, cy) = ((x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64);
                for (j, p) in js.iter().take(joints).enumerate() {
                    let d2 = (cx - p[0]).powi(2) + (cy - p[1]).powi(2);
                    maps[[t, y, x, j]] = (-d2 / (2.0 * JOINT_SIGMA * JOINT_SIGMA)).exp();
                }
                let (cov, _) = fig.cell(
                    x as f64 / n as f64,
                    (x + 1) as f64 / n as f64,
                    y as f64 / n as f64,
                    (y + 1) as f64 / n as f64,
                    4,
                    &dummy,
                );
                maps[[t, y, x, joints]] = cov;
            }
        }
    }
    maps
}

fn blank(size: usize) -> RgbdFrame<f64> {
    RgbdFrame::background(size, size)
}

/// Full-body reference in a neutral pose plus a crop around the head.
fn identity_frames(spec: &WorldSpec, id: &Identity) -> Vec<RgbdFrame<f64>> {
    let n = spec.image;
    let neutral = PlacedFigure::new(Figure::posed(MotionKind::Wave, std::f64::consts::PI), 1.0);
    let head = neutral.joints()[0];
    let half = 0.16;
    let windows = [
        (0.0, 1.0, 0.0, 1.0),
        (
            head[0] - half,
            head[0] + half,
            head[1] - half,
            head[1] + half,
        ),
    ];
    windows
        .iter()
        .map(|&(x0, x1, y0, y1)| {
            let mut f = blank(n);
            for y in 0..n {
                for x in 0..n {
                    let bx0 = x0 + (x1 - x0) * x as f64 / n as f64;
                    let bx1 = x0 + (x1 - x0) * (x + 1) as f64 / n as f64;
                    let by0 = y0 + (y1 - y0) * y as f64 / n as f64;
                    let by1 = y0 + (y1 - y0) * (y + 1) as f64 / n as f64;
                    let (a, col) = neutral.cell(bx0, bx1, by0, by1, SUPERSAMPLE, id);
                    for c in 0..3 {
                        f.rgb[[y, x, c]] = a * col[c] + (1.0 - a) * f.rgb[[y, x, c]];
                    }
                    f.coverage[[y, x]] = a > 0.0;
                }
            }
            f
        })
        .collect()
}

impl World {
    pub fn frames_len(&self) -> usize {
        self.spec.frames
    }

    /// Ground-truth-style render from camera `view` with the sprite posed and
    /// placed as at time `sprite_time`. Used for memory frames that show the
    /// room from a known viewpoint with the person elsewhere.
    pub fn render_displaced(&self, view: usize, sprite_time: usize) -> Result<RgbdFrame<f64>> {
        ensure!(
            view < self.spec.frames && sprite_time < self.spec.frames,
            "frame index out of range"
        );
        let intr = &self.scene.intrinsics;
        let grid = self.spec.grid();
        let poses = &self.scene.poses;
        let mut out = self.background[view].clone();
        if let Some(p) = project_root(
            &self.roots[sprite_time],
            &poses[0],
            &poses[view],
            intr,
            BODY_HEIGHT,
        ) {
            let half = p.a / 2.0;
            let n = self.spec.image as f64;
            let visible = p.u + half > 0.0 && p.u - half < n && p.v + half > 0.0 && p.v - half < n;
            if visible {
                let b = BBox::from_center(view, p.u, p.v, p.a, &grid)?;
                let id = IDENTITIES[self.spec.sprite.identity];
                composite(
                    &mut out,
                    &b,
                    p.depth,
                    &self.figures[sprite_time],
                    &id,
                    grid.patch,
                );
            }
        }
        Ok(out)
    }

    /// Every frame has a box of at least two tokens per side lying fully
    /// inside the image.
    pub fn plausible(&self) -> bool {
        let n = self.spec.image as f64;
        self.track.boxes.iter().all(|b| {
            b.is_some_and(|b| {
                let half = b.a / 2.0;
                b.width_tokens() >= 2
                    && b.height_tokens() >= 2
                    && b.u - half >= 0.0
                    && b.u + half <= n
                    && b.v - half >= 0.0
                    && b.v + half <= n
            })
        })
    }

    /// Pixel mask of the placement boxes, `T x H x W`.
    pub fn box_mask(&self) -> Array3<f64> {
        box_mask(&self.track, self.spec.image)
    }

    /// Silhouette coverage of the sprite per pixel, `T x H x W`.
    pub fn sprite_alpha(&self) -> Array3<f64> {
        let n = self.spec.image;
        let mut out = Array3::zeros((self.spec.frames, n, n));
        for (t, (g, b)) in self.frames.iter().zip(&self.background).enumerate() {
            for y in 0..n {
                for x in 0..n {
                    let diff: f64 = (0..3)
                        .map(|c| (g.rgb[[y, x, c]] - b.rgb[[y, x, c]]).abs())
                        .sum();
                    if diff > 0.0 || g.depth[[y, x]] != b.depth[[y, x]] {
                        out[[t, y, x]] = 1.0;
                    }
                }
            }
        }
        out
    }
}

/// Pixel mask that is 1 inside each frame's box.
pub fn box_mask(track: &PlacementTrack<f64>, image: usize) -> Array3<f64> {
    let p = track.grid.patch;
    let mut m = Array3::zeros((track.len(), image, image));
    for (t, b) in track.boxes.iter().enumerate() {
        if let Some(b) = b {
            for y in b.y1 * p..b.y2 * p {
                for x in b.x1 * p..b.x2 * p {
                    m[[t, y, x]] = 1.0;
                }
            }
        }
    }
    m
}

/// Weighted centroid of a nonnegative `H x W` map in token units, `None`
/// when the map sums to zero.
pub fn token_centroid(weights: &Array2<f64>, patch: usize) -> Option<(f64, f64)> {
    let total: f64 = weights.sum();
    if !(total > 0.0) {
        return None;
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for ((y, x), w) in weights.indexed_iter() {
        sx += w * (x as f64 + 0.5);
        sy += w * (y as f64 + 0.5);
    }
    Some((sx / total / patch as f64, sy / total / patch as f64))
}

/// Box center in token units.
pub fn box_center(b: &BBox<f64>) -> (f64, f64) {
    ((b.x1 + b.x2) as f64 / 2.0, (b.y1 + b.y2) as f64 / 2.0)
}
