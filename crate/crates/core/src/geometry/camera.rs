use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Near clipping distance in world units. Points at or closer than this are
/// culled and it anchors the inverse-depth encoding `z_near / z`.
pub const Z_NEAR: f64 = 0.1;

pub type Vec3<S> = [S; 3];
pub type Mat3<S> = [[S; 3]; 3];

pub(crate) fn mat_vec<S: Scalar>(m: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_t_vec<S: Scalar>(m: &Mat3<S>, v: &Vec3<S>) -> Vec3<S> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul<S: Scalar>(a: &Mat3<S>, b: &Mat3<S>) -> Mat3<S> {
    let mut out = [[S::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub(crate) fn add<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm<S: Scalar>(a: &Vec3<S>) -> S {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Pinhole intrinsics with square pixels and no skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<S> {
    pub f: S,
    pub cx: S,
    pub cy: S,
    pub width: usize,
    pub height: usize,
}

impl<S: Scalar> CameraIntrinsics<S> {
    pub fn new(f: S, cx: S, cy: S, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            f,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f > S::zero()) || !self.f.is_finite() {
            return Err(invalid(format!(
                "focal length must be positive, got {}",
                self.f
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image size must be nonzero"));
        }
        let w = S::lit(self.width as f64);
        let h = S::lit(self.height as f64);
        if !(self.cx >= S::zero() && self.cx < w && self.cy >= S::zero() && self.cy < h) {
            return Err(invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Continuous pixel coordinates of a camera-frame point. Pixel `i` spans
    /// `[i, i + 1)`.
    pub fn project(&self, p: &Vec3<S>) -> (S, S) {
        (
            self.f * p[0] / p[2] + self.cx,
            self.f * p[1] / p[2] + self.cy,
        )
    }

    pub fn backproject(&self, u: S, v: S, z: S) -> Vec3<S> {
        [(u - self.cx) * z / self.f, (v - self.cy) * z / self.f, z]
    }
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose<S> {
    pub rotation: Mat3<S>,
    pub translation: Vec3<S>,
}

impl<S: Scalar> CameraPose<S> {
    pub fn identity() -> Self {
        let (o, l) = (S::zero(), S::one());
        Self {
            rotation: [[l, o, o], [o, l, o], [o, o, l]],
            translation: [o, o, o],
        }
    }

    /// Validates orthonormality to 1e-9 (scaled for `f32`) and `det = +1`.
    pub fn new(rotation: Mat3<S>, translation: Vec3<S>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        let tol = if S::DTYPE == crate::scalar::Dtype::F64 {
            1e-9
        } else {
            1e-5
        };
        let rtr = mat_mul(&transpose(&rotation), &rotation);
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                if (v.as_f64() - target).abs() > tol {
                    return Err(invalid("rotation is not orthonormal"));
                }
            }
        }
        if (det(&rotation).as_f64() - 1.0).abs() > tol {
            return Err(invalid("rotation determinant must be +1"));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(invalid("translation must be finite"));
        }
        Ok(pose)
    }

    /// Camera looking from `eye` towards `target`, image y-axis roughly along
    /// `down` (world frame, y-down convention).
    pub fn look_at(eye: Vec3<S>, target: Vec3<S>, down: Vec3<S>) -> Self {
        let fwd = normalize(&sub(&target, &eye));
        let right = normalize(&cross(&down, &fwd));
        let d = cross(&fwd, &right);
        let rotation = [right, d, fwd];
        let translation = mat_vec(&rotation, &eye).map(|v| -v);
        Self {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, p: &Vec3<S>) -> Vec3<S> {
        add(&mat_vec(&self.rotation, p), &self.translation)
    }

    pub fn inverse_transform(&self, p: &Vec3<S>) -> Vec3<S> {
        mat_t_vec(&self.rotation, &sub(p, &self.translation))
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: mat_mul(&self.rotation, &other.rotation),
            translation: add(
                &mat_vec(&self.rotation, &other.translation),
                &self.translation,
            ),
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<S> {
        mat_t_vec(&self.rotation, &self.translation).map(|v| -v)
    }

    /// Unit optical axis (+z of the camera) in world coordinates.
    pub fn optical_axis(&self) -> Vec3<S> {
        self.rotation[2]
    }

    pub fn cast<T: Scalar>(&self) -> CameraPose<T> {
        CameraPose {
            rotation: self.rotation.map(|r| r.map(|v| T::lit(v.as_f64()))),
            translation: self.translation.map(|v| T::lit(v.as_f64())),
        }
    }
}

pub(crate) fn transpose<S: Scalar>(m: &Mat3<S>) -> Mat3<S> {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

pub(crate) fn det<S: Scalar>(m: &Mat3<S>) -> S {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub(crate) fn cross<S: Scalar>(a: &Vec3<S>, b: &Vec3<S>) -> Vec3<S> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn normalize<S: Scalar>(a: &Vec3<S>) -> Vec3<S> {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rotation about the camera y-axis (yaw) by `angle` radians.
pub fn yaw_rotation<S: Scalar>(angle: S) -> Mat3<S> {
    let (s, c) = angle.sin_cos();
    let (o, l) = (S::zero(), S::one());
    [[c, o, -s], [o, l, o], [s, o, c]]
}
