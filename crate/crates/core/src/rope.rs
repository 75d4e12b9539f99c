//! 3D rotary position embedding and its bbox-grounded query variant.
//!
//! Channels are split into temporal, horizontal and vertical groups. Each
//! group is rotated pairwise `(2k, 2k+1)` by `p * base^(-2k / d_axis)` where
//! `p` is the coordinate on that axis. Angles are evaluated in `f64` and
//! only the resulting cos/sin are cast to the working scalar.

use ndarray::{Array2, Array4, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::geometry::{BBox, PlacementTrack};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    /// Channel counts `(d_t, d_x, d_y)`.
    pub axis_split: [usize; 3],
    /// Shared coordinate given to queries outside the placement box.
    pub background_label: f64,
}

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
pub const DEFAULT_BACKGROUND_LABEL: f64 = 1.0e4;

impl RopeConfig {
    /// Default split: half the channels temporal, a quarter per spatial axis.
    pub fn new(head_dim: usize) -> Result<Self> {
        let spatial = 2 * (head_dim / 8);
        let cfg = Self {
            head_dim,
            base: DEFAULT_ROPE_BASE,
            axis_split: [head_dim.saturating_sub(2 * spatial), spatial, spatial],
            background_label: DEFAULT_BACKGROUND_LABEL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(invalid(format!(
                "head_dim must be even and positive, got {}",
                self.head_dim
            )));
        }
        if self.axis_split.iter().any(|d| *d == 0 || d % 2 != 0) {
            return Err(invalid(format!(
                "axis split {:?} must be even and positive",
                self.axis_split
            )));
        }
        if self.axis_split.iter().sum::<usize>() != self.head_dim {
            return Err(invalid(format!(
                "axis split {:?} does not sum to head_dim {}",
                self.axis_split, self.head_dim
            )));
        }
        if !(self.base > 1.0) || !self.base.is_finite() {
            return Err(invalid(format!(
                "rope base must exceed 1, got {}",
                self.base
            )));
        }
        if !self.background_label.is_finite() {
            return Err(invalid("background label must be finite"));
        }
        Ok(())
    }

    /// Checks that the background label exceeds every attainable grounded
    /// coordinate. The largest one is the canonical extent.
    pub fn validate_background(&self, canonical_h: usize, canonical_w: usize) -> Result<()> {
        let max = canonical_h.max(canonical_w) as f64;
        if self.background_label <= max {
            return Err(invalid(format!(
                "background label {} must exceed the largest grounded coordinate {max}",
                self.background_label
            )));
        }
        Ok(())
    }

    /// Per-pair frequencies in channel order (t pairs, then x, then y).
    pub fn frequencies(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.head_dim / 2);
        for (axis, &d) in self.axis_split.iter().enumerate() {
            for k in 0..d / 2 {
                out.push((axis, self.base.powf(-2.0 * k as f64 / d as f64)));
            }
        }
        out
    }
}

/// cos/sin for every channel pair at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation<S> {
    pub cos: Vec<S>,
    pub sin: Vec<S>,
}

impl<S: Scalar> Rotation<S> {
    pub fn at(position: [f64; 3], cfg: &RopeConfig) -> Self {
        let freqs = cfg.frequencies();
        let mut cos = Vec::with_capacity(freqs.len());
        let mut sin = Vec::with_capacity(freqs.len());
        for (axis, w) in freqs {
            let (s, c) = (position[axis] * w).sin_cos();
            cos.push(S::lit(c));
            sin.push(S::lit(s));
        }
        Self { cos, sin }
    }

    pub fn apply(&self, mut v: ArrayViewMut1<S>) {
        for (j, (c, s)) in self.cos.iter().zip(&self.sin).enumerate() {
            let (a, b) = (v[2 * j], v[2 * j + 1]);
            v[2 * j] = a * *c - b * *s;
            v[2 * j + 1] = a * *s + b * *c;
        }
    }

    /// Inverse rotation, used to pull gradients back through [`Self::apply`].
    pub fn apply_transpose(&self, mut v: ArrayViewMut1<S>) {
        for (j, (c, s)) in self.cos.iter().zip(&self.sin).enumerate() {
            let (a, b) = (v[2 * j], v[2 * j + 1]);
            v[2 * j] = a * *c + b * *s;
            v[2 * j + 1] = b * *c - a * *s;
        }
    }
}

/// Rotations for a list of positions, applied to the rows of a
/// `rows x (heads * head_dim)` matrix, one head at a time.
#[derive(Debug, Clone)]
pub struct RopeTable<S> {
    rotations: Vec<Rotation<S>>,
    head_dim: usize,
}

impl<S: Scalar> RopeTable<S> {
    pub fn new(positions: &[[f64; 3]], cfg: &RopeConfig) -> Self {
        Self {
            rotations: positions.iter().map(|p| Rotation::at(*p, cfg)).collect(),
            head_dim: cfg.head_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    fn each_head(&self, x: &mut Array2<S>, transpose: bool) {
        assert_eq!(x.nrows(), self.rotations.len(), "rope table row count");
        assert_eq!(x.ncols() % self.head_dim, 0, "rope table head width");
        let heads = x.ncols() / self.head_dim;
        for (mut row, rot) in x.axis_iter_mut(Axis(0)).zip(&self.rotations) {
            for h in 0..heads {
                let seg = row.slice_mut(ndarray::s![h * self.head_dim..(h + 1) * self.head_dim]);
                if transpose {
                    rot.apply_transpose(seg);
                } else {
                    rot.apply(seg);
                }
            }
        }
    }

    pub fn rotate(&self, x: &mut Array2<S>) {
        self.each_head(x, false);
    }

    pub fn rotate_transpose(&self, x: &mut Array2<S>) {
        self.each_head(x, true);
    }
}

/// Rotates one head vector at `position = (t, x, y)`.
pub fn rope_rotate<S: Scalar>(vec: &[S], position: [f64; 3], cfg: &RopeConfig) -> Result<Vec<S>> {
    cfg.validate()?;
    if vec.len() != cfg.head_dim {
        return Err(shape(format!(
            "vector has {} channels, rope expects {}",
            vec.len(),
            cfg.head_dim
        )));
    }
    let mut out = ndarray::Array1::from(vec.to_vec());
    Rotation::at(position, cfg).apply(out.view_mut());
    Ok(out.to_vec())
}

/// Per-frame canonical-to-box scale factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactors {
    pub s_h: f64,
    pub s_w: f64,
}

pub fn scale_factors<S: Scalar>(
    bbox: &BBox<S>,
    canonical_h: usize,
    canonical_w: usize,
) -> Result<ScaleFactors> {
    if bbox.x2 <= bbox.x1 || bbox.y2 <= bbox.y1 {
        return Err(invalid(format!(
            "bbox ({}, {}, {}, {}) has zero area",
            bbox.x1, bbox.y1, bbox.x2, bbox.y2
        )));
    }
    Ok(ScaleFactors {
        s_h: canonical_h as f64 / bbox.height_tokens() as f64,
        s_w: canonical_w as f64 / bbox.width_tokens() as f64,
    })
}

/// Grounded spatial coordinates of grid cell `(x, y)` relative to the box
/// origin, before any containment test: `(s_w (x - x1), s_h (y - y1))`.
pub fn grounded_coordinates<S: Scalar>(
    x: f64,
    y: f64,
    bbox: &BBox<S>,
    canonical_h: usize,
    canonical_w: usize,
) -> Result<(f64, f64)> {
    scale_factors(bbox, canonical_h, canonical_w)?;
    Ok((
        (x - bbox.x1 as f64) * canonical_w as f64 / bbox.width_tokens() as f64,
        (y - bbox.y1 as f64) * canonical_h as f64 / bbox.height_tokens() as f64,
    ))
}

/// Position used to rotate the query at video-grid cell `(t, x, y)`.
pub fn grounded_position<S: Scalar>(
    t: usize,
    x: usize,
    y: usize,
    bbox: Option<&BBox<S>>,
    canonical_h: usize,
    canonical_w: usize,
    cfg: &RopeConfig,
) -> [f64; 3] {
    match bbox {
        // multiplying before dividing keeps integer corners exact
        Some(b) if b.contains(x, y) => [
            t as f64,
            (x - b.x1) as f64 * canonical_w as f64 / b.width_tokens() as f64,
            (y - b.y1) as f64 * canonical_h as f64 / b.height_tokens() as f64,
        ],
        _ => [t as f64, cfg.background_label, cfg.background_label],
    }
}

/// Grounded positions for every query of a `frames x height x width` grid,
/// in `(t, y, x)` row-major order.
pub fn grounded_query_positions<S: Scalar>(
    track: &PlacementTrack<S>,
    frames: usize,
    canonical_h: usize,
    canonical_w: usize,
    cfg: &RopeConfig,
) -> Result<Vec<[f64; 3]>> {
    if track.len() != frames {
        return Err(shape(format!(
            "track has {} frames, queries have {frames}",
            track.len()
        )));
    }
    let g = track.grid;
    let mut out = Vec::with_capacity(frames * g.tokens());
    for t in 0..frames {
        let b = track.get(t);
        for y in 0..g.height {
            for x in 0..g.width {
                out.push(grounded_position(t, x, y, b, canonical_h, canonical_w, cfg));
            }
        }
    }
    Ok(out)
}

/// Literal canonical positions `(t, x_c, y_c)` in `(t, y_c, x_c)` row-major order.
pub fn canonical_key_positions(
    frames: usize,
    canonical_h: usize,
    canonical_w: usize,
) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(frames * canonical_h * canonical_w);
    for t in 0..frames {
        for y in 0..canonical_h {
            for x in 0..canonical_w {
                out.push([t as f64, x as f64, y as f64]);
            }
        }
    }
    out
}

/// Plain 3D positions `(t, x, y)` for a `frames x height x width` grid.
pub fn grid_positions(frames: usize, height: usize, width: usize) -> Vec<[f64; 3]> {
    canonical_key_positions(frames, height, width)
}

fn rotate_grid<S: Scalar>(grid: &Array4<S>, positions: &[[f64; 3]], cfg: &RopeConfig) -> Array4<S> {
    let mut out = grid.clone();
    let d = grid.dim().3;
    let mut flat = out
        .view_mut()
        .into_shape_with_order((positions.len(), d))
        .expect("contiguous grid");
    for (row, p) in flat.axis_iter_mut(Axis(0)).zip(positions) {
        Rotation::<S>::at(*p, cfg).apply(row);
    }
    out
}

/// Rotates a `T x H x W x head_dim` query grid with bbox-grounded positions.
pub fn grounded_query_rope<S: Scalar>(
    queries: &Array4<S>,
    track: &PlacementTrack<S>,
    cfg: &RopeConfig,
    canonical_h: usize,
    canonical_w: usize,
) -> Result<Array4<S>> {
    cfg.validate()?;
    let (t, h, w, d) = queries.dim();
    if d != cfg.head_dim {
        return Err(shape(format!(
            "queries have {d} channels, rope expects {}",
            cfg.head_dim
        )));
    }
    if (h, w) != (track.grid.height, track.grid.width) {
        return Err(shape(format!(
            "query grid {h}x{w} does not match track grid {}x{}",
            track.grid.height, track.grid.width
        )));
    }
    let positions = grounded_query_positions(track, t, canonical_h, canonical_w, cfg)?;
    Ok(rotate_grid(
        &queries.as_standard_layout().to_owned(),
        &positions,
        cfg,
    ))
}

/// Rotates a `T x h_c x w_c x head_dim` key grid at its literal coordinates.
pub fn canonical_key_rope<S: Scalar>(keys: &Array4<S>, cfg: &RopeConfig) -> Result<Array4<S>> {
    cfg.validate()?;
    let (t, h, w, d) = keys.dim();
    if d != cfg.head_dim {
        return Err(shape(format!(
            "keys have {d} channels, rope expects {}",
            cfg.head_dim
        )));
    }
    let positions = canonical_key_positions(t, h, w);
    Ok(rotate_grid(
        &keys.as_standard_layout().to_owned(),
        &positions,
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TokenGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    #[test]
    fn default_split() {
        let c = RopeConfig::new(16).unwrap();
        assert_eq!(c.axis_split, [8, 4, 4]);
        assert_eq!(RopeConfig::new(8).unwrap().axis_split, [4, 2, 2]);
        assert!(RopeConfig::new(4).is_err());
        assert!(RopeConfig::new(7).is_err());
        let mut bad = c;
        bad.axis_split = [6, 4, 4];
        assert!(bad.validate().is_err());
        assert!(c.validate_background(12, 12).is_ok());
        let mut small = c;
        small.background_label = 8.0;
        assert!(small.validate_background(12, 12).is_err());
    }

    #[test]
    fn zero_position_is_identity() {
        let cfg = RopeConfig::new(16).unwrap();
        let v: Vec<f64> = (0..16).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(rope_rotate(&v, [0.0; 3], &cfg).unwrap(), v);
        assert!(rope_rotate(&v[..8], [0.0; 3], &cfg).is_err());
    }

    #[test]
    fn norm_and_relative_position() {
        let cfg = RopeConfig::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p1 = [
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            ];
            let p2 = [
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..10.0),
            ];
            let d = [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ];
            let rq = rope_rotate(&q, p1, &cfg).unwrap();
            assert!((norm(&rq) - norm(&q)).abs() < 1e-12);
            let lhs = dot(&rq, &rope_rotate(&k, p2, &cfg).unwrap());
            let shift = |p: [f64; 3]| [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
            let rhs = dot(
                &rope_rotate(&q, shift(p1), &cfg).unwrap(),
                &rope_rotate(&k, shift(p2), &cfg).unwrap(),
            );
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn transpose_inverts() {
        let cfg = RopeConfig::new(8).unwrap();
        let rot = Rotation::<f64>::at([1.5, -2.0, 7.25], &cfg);
        let orig = ndarray::Array1::from(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
        let mut v = orig.clone();
        rot.apply(v.view_mut());
        rot.apply_transpose(v.view_mut());
        for (a, b) in v.iter().zip(orig.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn scale_factor_values() {
        let g = TokenGrid::from_pixels(24, 24, 1).unwrap();
        let b = BBox::<f64>::from_corners(0, 2, 3, 7, 15, &g).unwrap();
        let s = scale_factors(&b, 12, 12).unwrap();
        assert_eq!(s.s_h, 1.0);
        assert_eq!(s.s_w, 2.4);
        let half = BBox::<f64>::from_corners(0, 0, 0, 12, 6, &g).unwrap();
        assert_eq!(scale_factors(&half, 12, 12).unwrap().s_h, 2.0);
        let mut degenerate = b;
        degenerate.x2 = degenerate.x1;
        assert!(scale_factors(&degenerate, 12, 12).is_err());
    }

    #[test]
    fn grounded_corners_and_background() {
        let cfg = RopeConfig::new(16).unwrap();
        let g = TokenGrid::from_pixels(24, 24, 1).unwrap();
        let b = BBox::<f64>::from_corners(0, 5, 4, 17, 16, &g).unwrap();
        assert_eq!(
            grounded_position(2, 5, 4, Some(&b), 12, 12, &cfg),
            [2.0, 0.0, 0.0]
        );
        assert_eq!(
            grounded_position(2, 16, 15, Some(&b), 12, 12, &cfg),
            [2.0, 11.0, 11.0]
        );
        let a = grounded_position(1, 0, 0, Some(&b), 12, 12, &cfg);
        let c = grounded_position(1, 23, 20, Some(&b), 12, 12, &cfg);
        assert_eq!(a, c);
        assert_eq!(a, [1.0, 1e4, 1e4]);
        assert_eq!(
            grounded_position::<f64>(0, 6, 6, None, 12, 12, &cfg),
            [0.0, 1e4, 1e4]
        );
        assert_eq!(
            grounded_coordinates(17.0, 16.0, &b, 12, 12).unwrap(),
            (12.0, 12.0)
        );
    }

    #[test]
    fn grid_rotations() {
        let cfg = RopeConfig::new(8).unwrap();
        let g = TokenGrid::from_pixels(4, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = Array4::from_shape_fn((2, 4, 4, 8), |_| rng.random_range(-1.0..1.0));
        let b = BBox::<f64>::from_corners(0, 0, 0, 4, 4, &g).unwrap();
        let track = crate::geometry::static_bbox_track(&b, 2, &g);
        let rq = grounded_query_rope(&q, &track, &cfg, 4, 4).unwrap();
        let rk = canonical_key_rope(&q, &cfg).unwrap();
        // unit scale, origin at zero: grounding is the identity mapping
        assert_eq!(rq, rk);
        // key at (t, 0, 0) only has temporal channels rotated
        for c in 4..8 {
            assert_eq!(rk[[1, 0, 0, c]], q[[1, 0, 0, c]]);
        }
        assert_ne!(rk[[1, 0, 0, 0]], q[[1, 0, 0, 0]]);
        let short = crate::geometry::static_bbox_track(&b, 1, &g);
        assert!(grounded_query_rope(&q, &short, &cfg, 4, 4).is_err());
    }
}
