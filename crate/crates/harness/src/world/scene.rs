//! Point-cloud rooms and camera paths through them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scenecomp_core::geometry::{yaw_rotation, CameraPose, ColoredPoint, PointCloud, Vec3};
use scenecomp_core::Result;

/// World y of the floor (y points down).
pub const GROUND_Y: f64 = 1.0;
pub const WALL_Z: f64 = 9.0;
const HALF_WIDTH: f64 = 6.0;
const CEILING_Y: f64 = -5.0;
const NEAR_Z: f64 = 0.8;
const PILLAR_RADIUS: f64 = 0.3;

/// Point the cameras look at, before the per-clip lateral offset.
pub const LOOK_TARGET: Vec3<f64> = [0.0, 0.35, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Orbit,
    Dolly,
    LoopRevisit,
}

impl PathKind {
    pub const ALL: [PathKind; 3] = [Self::Orbit, Self::Dolly, Self::LoopRevisit];
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

fn shade(c: [f64; 3], f: f64) -> [f64; 3] {
    c.map(|v| (v * f).clamp(0.0, 1.0))
}

/// Dense room cloud: checkered floor, striped back wall and `pillars`
/// colored columns. Floor points are denser near the camera so that every
/// pixel receives several points.
pub fn build_room(seed: u64, points: usize, pillars: usize) -> Result<PointCloud<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor_base = color(&mut rng, 0.35, 0.95);
    let floor = [floor_base, shade(floor_base, 0.45)];
    let wall_base = color(&mut rng, 0.35, 0.95);
    let wall = [wall_base, shade(wall_base, 0.6)];
    let columns: Vec<([f64; 2], [f64; 3])> = (0..pillars)
        .map(|_| {
            let x = rng.random_range(-3.2..3.2);
            let z = rng.random_range(5.5..8.2);
            ([x, z], color(&mut rng, 0.05, 1.0))
        })
        .collect();

    let n_floor = points * 7 / 10;
    let n_pillars = if pillars > 0 { points * 3 / 20 } else { 0 };
    let n_wall = points - n_floor - n_pillars;
    let mut out = Vec::with_capacity(points);
    let ratio = WALL_Z / NEAR_Z;
    for _ in 0..n_floor {
        let z = NEAR_Z * ratio.powf(rng.random::<f64>());
        let half = (0.8 * z).min(HALF_WIDTH);
        let x = rng.random_range(-half..half);
        let even = (x.floor() as i64 + z.floor() as i64).rem_euclid(2) == 0;
        out.push(ColoredPoint {
            position: [x, GROUND_Y, z],
            color: floor[usize::from(!even)],
        });
    }
    for _ in 0..n_wall {
        let x = rng.random_range(-HALF_WIDTH..HALF_WIDTH);
        let y = rng.random_range(CEILING_Y..GROUND_Y);
        let band = ((y - CEILING_Y) / 0.5).floor() as i64 % 2;
        out.push(ColoredPoint {
            position: [x, y, WALL_Z],
            color: wall[band as usize],
        });
    }
    for i in 0..n_pillars {
        let (c, col) = columns[i % columns.len()];
        let ang = rng.random_range(0.0..2.0 * PI);
        let y = rng.random_range(CEILING_Y..GROUND_Y);
        let light = 0.55 + 0.45 * (-ang.sin()).max(0.0);
        out.push(ColoredPoint {
            position: [
                c[0] + PILLAR_RADIUS * ang.cos(),
                y,
                c[1] + PILLAR_RADIUS * ang.sin(),
            ],
            color: shade(col, light),
        });
    }
    PointCloud::new(out)
}

/// Bernoulli subsample keeping each point with probability `keep`.
pub fn subsample(cloud: &PointCloud<f64>, keep: f64, seed: u64) -> Result<PointCloud<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = cloud
        .points
        .iter()
        .filter(|_| rng.random_bool(keep))
        .copied()
        .collect();
    PointCloud::new(pts)
}

/// Camera parameters of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub kind: PathKind,
    /// Radians for orbits and loops, world units for dollies.
    pub amplitude: f64,
    /// Lateral offset of the start eye and look target.
    pub lateral: f64,
}

const DOWN: Vec3<f64> = [0.0, 1.0, 0.0];

fn orbit(eye: Vec3<f64>, target: Vec3<f64>, angle: f64) -> CameraPose<f64> {
    let rel = [eye[0] - target[0], eye[1] - target[1], eye[2] - target[2]];
    let r = yaw_rotation(angle);
    let rot = [
        r[0][0] * rel[0] + r[0][1] * rel[1] + r[0][2] * rel[2],
        r[1][0] * rel[0] + r[1][1] * rel[1] + r[1][2] * rel[2],
        r[2][0] * rel[0] + r[2][1] * rel[1] + r[2][2] * rel[2],
    ];
    let e = [target[0] + rot[0], target[1] + rot[1], target[2] + rot[2]];
    CameraPose::look_at(e, target, DOWN)
}

/// Per-frame world-to-camera poses. Progress runs `s = t / (T - 1)`;
/// loop paths follow `sin(pi s)` and so return to their start.
pub fn camera_path(spec: &PathSpec, frames: usize) -> Vec<CameraPose<f64>> {
    let eye = [spec.lateral, 0.0, 0.0];
    let target = [
        LOOK_TARGET[0] + spec.lateral,
        LOOK_TARGET[1],
        LOOK_TARGET[2],
    ];
    (0..frames)
        .map(|t| {
            let s = if frames > 1 {
                t as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            match spec.kind {
                PathKind::Orbit => orbit(eye, target, spec.amplitude * s),
                PathKind::LoopRevisit => orbit(eye, target, spec.amplitude * (PI * s).sin()),
                PathKind::Dolly => {
                    let d = spec.amplitude * s;
                    CameraPose::look_at(
                        [eye[0], eye[1], eye[2] + d],
                        [target[0], target[1], target[2] + d],
                        DOWN,
                    )
                }
            }
        })
        .collect()
}
