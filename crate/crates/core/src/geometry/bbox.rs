use serde::{Deserialize, Serialize};

use super::camera::{add, CameraIntrinsics, CameraPose, Vec3, Z_NEAR};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Fraction of the bbox side the body occupies in canonical space.
pub const BODY_OCCUPANCY: f64 = 0.9;

/// Token grid a pixel image is divided into (`patch x patch` pixels per token).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub patch: usize,
    pub width: usize,
    pub height: usize,
}

impl TokenGrid {
    pub fn from_pixels(width_px: usize, height_px: usize, patch: usize) -> Result<Self> {
        if patch == 0
            || !width_px.is_multiple_of(patch)
            || !height_px.is_multiple_of(patch)
            || width_px == 0
            || height_px == 0
        {
            return Err(invalid(format!(
                "image {width_px}x{height_px} is not divisible into {patch}-pixel patches"
            )));
        }
        Ok(Self {
            patch,
            width: width_px / patch,
            height: height_px / patch,
        })
    }

    pub fn tokens(&self) -> usize {
        self.width * self.height
    }

    pub fn width_px(&self) -> usize {
        self.width * self.patch
    }

    pub fn height_px(&self) -> usize {
        self.height * self.patch
    }
}

/// Axis-aligned placement box, kept in two forms: token corners
/// `[x1, x2) x [y1, y2)` and pixel center/side `(u, v, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<S> {
    pub t: usize,
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    pub u: S,
    pub v: S,
    pub a: S,
}

/// Outward-rounded token extent `[lo, hi)` of the pixel interval
/// `[center - side/2, center + side/2]`, clamped to `0..limit` with at least
/// one token.
fn token_extent<S: Scalar>(center: S, side: S, patch: usize, limit: usize) -> (usize, usize) {
    let p = S::lit(patch as f64);
    let half = side / S::lit(2.0);
    let lo = ((center - half) / p).floor().as_f64();
    let hi = ((center + half) / p).ceil().as_f64();
    let max = limit as f64;
    let mut lo = lo.clamp(0.0, max) as usize;
    let mut hi = hi.clamp(0.0, max) as usize;
    if hi <= lo {
        if lo >= limit {
            lo = limit - 1;
            hi = limit;
        } else {
            hi = lo + 1;
        }
    }
    (lo, hi)
}

impl<S: Scalar> BBox<S> {
    /// Builds a box from its pixel center and side; the corner form follows
    /// by outward rounding.
    pub fn from_center(t: usize, u: S, v: S, a: S, grid: &TokenGrid) -> Result<Self> {
        if !(a > S::zero()) || !a.is_finite() || !u.is_finite() || !v.is_finite() {
            return Err(invalid(format!(
                "bbox needs a positive finite side, got a={a}"
            )));
        }
        let (x1, x2) = token_extent(u, a, grid.patch, grid.width);
        let (y1, y2) = token_extent(v, a, grid.patch, grid.height);
        Ok(Self {
            t,
            x1,
            y1,
            x2,
            y2,
            u,
            v,
            a,
        })
    }

    /// Builds a box from token corners. The center form is the rectangle
    /// center with side equal to the longer extent.
    pub fn from_corners(
        t: usize,
        x1: usize,
        y1: usize,
        x2: usize,
        y2: usize,
        grid: &TokenGrid,
    ) -> Result<Self> {
        if x1 >= x2 || y1 >= y2 {
            return Err(invalid(format!("degenerate bbox ({x1}, {y1}, {x2}, {y2})")));
        }
        if x2 > grid.width || y2 > grid.height {
            return Err(invalid(format!(
                "bbox ({x1}, {y1}, {x2}, {y2}) exceeds {}x{} token grid",
                grid.width, grid.height
            )));
        }
        let p = grid.patch as f64;
        let side = (x2 - x1).max(y2 - y1) as f64 * p;
        Ok(Self {
            t,
            x1,
            y1,
            x2,
            y2,
            u: S::lit((x1 + x2) as f64 * p / 2.0),
            v: S::lit((y1 + y2) as f64 * p / 2.0),
            a: S::lit(side),
        })
    }

    pub fn width_tokens(&self) -> usize {
        self.x2 - self.x1
    }

    pub fn height_tokens(&self) -> usize {
        self.y2 - self.y1
    }

    pub fn area_tokens(&self) -> usize {
        self.width_tokens() * self.height_tokens()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    /// True when the corner form equals the one re-derived from `(u, v, a)`.
    pub fn is_consistent(&self, grid: &TokenGrid) -> bool {
        let (x1, x2) = token_extent(self.u, self.a, grid.patch, grid.width);
        let (y1, y2) = token_extent(self.v, self.a, grid.patch, grid.height);
        (x1, y1, x2, y2) == (self.x1, self.y1, self.x2, self.y2)
    }

    pub fn with_frame(mut self, t: usize) -> Self {
        self.t = t;
        self
    }
}

/// Per-frame placement boxes; `None` marks a frame whose root is behind the
/// camera or whose box falls entirely outside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementTrack<S> {
    pub grid: TokenGrid,
    pub boxes: Vec<Option<BBox<S>>>,
}

impl<S: Scalar> PlacementTrack<S> {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<&BBox<S>> {
        self.boxes.get(t).and_then(|b| b.as_ref())
    }

    pub fn off_screen(&self) -> Vec<bool> {
        self.boxes.iter().map(|b| b.is_none()).collect()
    }

    /// Token mask of the union of all boxes, `height x width`, row-major.
    pub fn union_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.grid.tokens()];
        for b in self.boxes.iter().flatten() {
            for y in b.y1..b.y2 {
                for x in b.x1..b.x2 {
                    mask[y * self.grid.width + x] = true;
                }
            }
        }
        mask
    }
}

/// Root motion relative to the first frame, expressed in the frame-0 camera
/// coordinate system.
#[derive(Debug, Clone, PartialEq)]
pub struct RootTrajectory<S> {
    pub offsets: Vec<Vec3<S>>,
    pub body_height: S,
}

impl<S: Scalar> RootTrajectory<S> {
    pub fn new(offsets: Vec<Vec3<S>>, body_height: S) -> Result<Self> {
        if offsets.is_empty() {
            return Err(invalid("root trajectory needs at least one frame"));
        }
        if offsets[0].iter().any(|v| *v != S::zero()) {
            return Err(invalid("first root offset must be zero"));
        }
        if !(body_height > S::zero()) {
            return Err(invalid("body height must be positive"));
        }
        Ok(Self {
            offsets,
            body_height,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Absolute roots `P_t = P_0 + ΔΓ_t`.
    pub fn absolute(&self, p0: &Vec3<S>) -> Vec<Vec3<S>> {
        self.offsets.iter().map(|d| add(p0, d)).collect()
    }
}

/// Depth at which a body of height `body_height` fills 90% of a bbox of
/// side `a0` pixels.
pub fn estimate_root_depth<S: Scalar>(
    body_height: S,
    a0: S,
    intr: &CameraIntrinsics<S>,
) -> Result<S> {
    intr.validate()?;
    if !(a0 > S::zero()) {
        return Err(invalid(format!("bbox side must be positive, got {a0}")));
    }
    if !(body_height > S::zero()) {
        return Err(invalid(format!(
            "body height must be positive, got {body_height}"
        )));
    }
    Ok(intr.f * body_height / (S::lit(BODY_OCCUPANCY) * a0))
}

pub fn backproject_bbox_center<S: Scalar>(
    bbox0: &BBox<S>,
    z0: S,
    intr: &CameraIntrinsics<S>,
) -> Result<Vec3<S>> {
    if !(z0 > S::zero()) {
        return Err(invalid(format!("root depth must be positive, got {z0}")));
    }
    Ok(intr.backproject(bbox0.u, bbox0.v, z0))
}

/// Projected root of one frame: center `(u, v)`, side `a` and camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedRoot<S> {
    pub u: S,
    pub v: S,
    pub a: S,
    pub depth: S,
}

/// Projects an anchor-frame root into camera `pose`; `None` when the root is
/// at or behind the near plane.
pub fn project_root<S: Scalar>(
    root: &Vec3<S>,
    anchor: &CameraPose<S>,
    pose: &CameraPose<S>,
    intr: &CameraIntrinsics<S>,
    body_height: S,
) -> Option<ProjectedRoot<S>> {
    let world = anchor.inverse_transform(root);
    let cam = pose.transform(&world);
    if !(cam[2] > S::lit(Z_NEAR)) {
        return None;
    }
    let (u, v) = intr.project(&cam);
    Some(ProjectedRoot {
        u,
        v,
        a: intr.f * body_height / (S::lit(BODY_OCCUPANCY) * cam[2]),
        depth: cam[2],
    })
}

/// Propagates a first-frame root along the relative trajectory and projects
/// each frame into its camera, giving one box per frame.
pub fn propagate_and_project<S: Scalar>(
    p0: &Vec3<S>,
    traj: &RootTrajectory<S>,
    poses: &[CameraPose<S>],
    intr: &CameraIntrinsics<S>,
    grid: &TokenGrid,
) -> Result<PlacementTrack<S>> {
    intr.validate()?;
    if traj.len() != poses.len() {
        return Err(invalid(format!(
            "trajectory has {} frames but {} poses were given",
            traj.len(),
            poses.len()
        )));
    }
    let (w, h) = (S::lit(intr.width as f64), S::lit(intr.height as f64));
    let boxes = traj
        .absolute(p0)
        .iter()
        .zip(poses)
        .enumerate()
        .map(|(t, (root, pose))| {
            let pr = project_root(root, &poses[0], pose, intr, traj.body_height)?;
            let half = pr.a / S::lit(2.0);
            let outside = pr.u + half <= S::zero()
                || pr.u - half >= w
                || pr.v + half <= S::zero()
                || pr.v - half >= h;
            if outside {
                return None;
            }
            BBox::from_center(t, pr.u, pr.v, pr.a, grid).ok()
        })
        .collect();
    Ok(PlacementTrack { grid: *grid, boxes })
}

/// Replicates the first-frame box across `frames` frames.
pub fn static_bbox_track<S: Scalar>(
    bbox0: &BBox<S>,
    frames: usize,
    grid: &TokenGrid,
) -> PlacementTrack<S> {
    PlacementTrack {
        grid: *grid,
        boxes: (0..frames).map(|t| Some(bbox0.with_frame(t))).collect(),
    }
}
