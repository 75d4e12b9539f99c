use ndarray::{Array2, Array3};

use super::camera::{CameraIntrinsics, CameraPose, Vec3, Z_NEAR};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Color written to pixels no point lands on.
pub const BACKGROUND_GRAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint<S> {
    pub position: Vec3<S>,
    pub color: Vec3<S>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud<S> {
    pub points: Vec<ColoredPoint<S>>,
}

impl<S: Scalar> PointCloud<S> {
    pub fn new(points: Vec<ColoredPoint<S>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.color.iter().any(|c| !(*c >= S::zero() && *c <= S::one())) {
                return Err(invalid(format!("point {i}: color channel outside [0, 1]")));
            }
            if p.position.iter().any(|c| !c.is_finite()) {
                return Err(invalid(format!("point {i}: non-finite position")));
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One rendered environment frame: color, normalized inverse depth and hit mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame<S> {
    /// `H x W x 3`, values in `[0, 1]`.
    pub rgb: Array3<S>,
    /// `H x W`, `clip(z_near / z, 0, 1)`; zero where nothing was hit.
    pub depth: Array2<S>,
    pub coverage: Array2<bool>,
}

impl<S: Scalar> RgbdFrame<S> {
    pub fn background(height: usize, width: usize) -> Self {
        Self {
            rgb: Array3::from_elem((height, width, 3), S::lit(BACKGROUND_GRAY)),
            depth: Array2::zeros((height, width)),
            coverage: Array2::from_elem((height, width), false),
        }
    }

    pub fn height(&self) -> usize {
        self.depth.nrows()
    }

    pub fn width(&self) -> usize {
        self.depth.ncols()
    }

    /// Interleaved `H x W x 4` RGB-D array.
    pub fn to_rgbd(&self) -> Array3<S> {
        let (h, w) = (self.height(), self.width());
        let mut out = Array3::zeros((h, w, 4));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[[y, x, c]] = self.rgb[[y, x, c]];
                }
                out[[y, x, 3]] = self.depth[[y, x]];
            }
        }
        out
    }
}

/// Nearest-pixel splat of a colored point cloud with a per-pixel z-buffer.
///
/// A point lands in the pixel containing its continuous projection. Ties at
/// bit-equal depth keep the earlier point.
pub fn project_point_cloud<S: Scalar>(
    cloud: &PointCloud<S>,
    pose: &CameraPose<S>,
    intr: &CameraIntrinsics<S>,
) -> Result<RgbdFrame<S>> {
    intr.validate()?;
    if cloud.is_empty() {
        return Err(invalid("cannot render an empty point cloud"));
    }
    let (h, w) = (intr.height, intr.width);
    let mut frame = RgbdFrame::background(h, w);
    let mut zbuf = Array2::from_elem((h, w), S::infinity());
    let z_near = S::lit(Z_NEAR);
    for p in &cloud.points {
        let pc = pose.transform(&p.position);
        if !(pc[2] > z_near) {
            continue;
        }
        let (u, v) = intr.project(&pc);
        let (px, py) = (u.floor(), v.floor());
        if !(px >= S::zero() && py >= S::zero()) {
            continue;
        }
        let (px, py) = (px.as_f64() as usize, py.as_f64() as usize);
        if px >= w || py >= h {
            continue;
        }
        if pc[2] < zbuf[[py, px]] {
            zbuf[[py, px]] = pc[2];
            for c in 0..3 {
                frame.rgb[[py, px, c]] = p.color[c];
            }
            frame.depth[[py, px]] = (z_near / pc[2]).max(S::zero()).min(S::one());
            frame.coverage[[py, px]] = true;
        }
    }
    Ok(frame)
}
