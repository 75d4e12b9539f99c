use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{BBox, PlacementTrack};
use crate::scalar::Scalar;

/// Ranges for clip-level bbox jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxAugment {
    /// Center shift drawn from `[-jitter, jitter]` tokens per axis.
    pub jitter: f64,
    /// Side factor drawn from `[1 - scale, 1 + scale]`.
    pub scale: f64,
}

/// One clip's draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBoxJitter {
    pub dx: f64,
    pub dy: f64,
    pub factor: f64,
}

impl BBoxAugment {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !(self.scale >= 0.0) || self.scale >= 1.0 {
            return Err(invalid(format!(
                "bbox augmentation ranges {self:?} are invalid"
            )));
        }
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> BBoxJitter {
        let mut u = |r: f64| {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        };
        let dx = u(self.jitter);
        let dy = u(self.jitter);
        let factor = 1.0 + u(self.scale);
        BBoxJitter { dx, dy, factor }
    }
}

impl BBoxJitter {
    /// Shifts and rescales every box, rounding outward and clamping to the
    /// grid with at least one token per side.
    pub fn apply<S: Scalar>(&self, track: &PlacementTrack<S>) -> PlacementTrack<S> {
        let g = track.grid;
        let boxes = track
            .boxes
            .iter()
            .map(|b| {
                b.map(|b| {
                    let cx = (b.x1 + b.x2) as f64 / 2.0 + self.dx;
                    let cy = (b.y1 + b.y2) as f64 / 2.0 + self.dy;
                    let hw = b.width_tokens() as f64 * self.factor / 2.0;
                    let hh = b.height_tokens() as f64 * self.factor / 2.0;
                    let (x1, x2) = extent(cx - hw, cx + hw, g.width);
                    let (y1, y2) = extent(cy - hh, cy + hh, g.height);
                    let p = S::lit(g.patch as f64);
                    BBox {
                        t: b.t,
                        x1,
                        y1,
                        x2,
                        y2,
                        u: b.u + S::lit(self.dx) * p,
                        v: b.v + S::lit(self.dy) * p,
                        a: b.a * S::lit(self.factor),
                    }
                })
            })
            .collect();
        PlacementTrack { grid: g, boxes }
    }
}

fn extent(lo: f64, hi: f64, limit: usize) -> (usize, usize) {
    let max = limit as f64;
    let lo = lo.floor().clamp(0.0, max - 1.0) as usize;
    let hi = (hi.ceil().clamp(0.0, max) as usize).max(lo + 1);
    (lo, hi)
}

/// Jitters a whole track with a single draw shared across frames.
pub fn augment_bbox<S: Scalar, R: Rng>(
    track: &PlacementTrack<S>,
    rng: &mut R,
    params: &BBoxAugment,
) -> Result<PlacementTrack<S>> {
    params.validate()?;
    Ok(params.draw(rng).apply(track))
}
