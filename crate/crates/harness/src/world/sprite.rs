//! Stick-figure sprite: pose functions per motion, canonical placement with
//! the silhouette centroid at the box center, and rasterization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use scenecomp_core::geometry::BODY_OCCUPANCY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    JumpingJack,
    Wave,
    Squat,
    March,
}

impl MotionKind {
    pub const ALL: [MotionKind; 4] = [Self::JumpingJack, Self::Wave, Self::Squat, Self::March];

    pub fn name(self) -> &'static str {
        match self {
            Self::JumpingJack => "jumping_jack",
            Self::Wave => "wave",
            Self::Squat => "squat",
            Self::March => "march",
        }
    }
}

/// Clothing and skin colors of one sprite identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity {
    pub skin: [f64; 3],
    pub shirt: [f64; 3],
    pub pants: [f64; 3],
}

pub const IDENTITIES: [Identity; 3] = [
    Identity {
        skin: [0.95, 0.8, 0.65],
        shirt: [0.9, 0.1, 0.1],
        pants: [0.1, 0.1, 0.45],
    },
    Identity {
        skin: [0.55, 0.38, 0.25],
        shirt: [0.1, 0.85, 0.2],
        pants: [0.95, 0.95, 0.9],
    },
    Identity {
        skin: [0.85, 0.7, 0.5],
        shirt: [0.95, 0.9, 0.05],
        pants: [0.05, 0.05, 0.05],
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Skin,
    Shirt,
    Pants,
}

impl Part {
    pub fn color(self, id: &Identity) -> [f64; 3] {
        match self {
            Part::Skin => id.skin,
            Part::Shirt => id.shirt,
            Part::Pants => id.pants,
        }
    }
}

type P2 = [f64; 2];

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: P2,
    b: P2,
    radius: f64,
    part: Part,
}

impl Capsule {
    fn contains(&self, p: P2) -> bool {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 {
            (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (self.a[0] + s * dx - p[0], self.a[1] + s * dy - p[1]);
        qx * qx + qy * qy <= self.radius * self.radius
    }
}

/// One posed figure in body coordinates: x to the right, y down, head top
/// near 0 and feet near 1 when standing.
#[derive(Debug, Clone)]
pub struct Figure {
    /// Drawn back to front; later capsules win.
    capsules: Vec<Capsule>,
    /// Head, left hand, right hand.
    joints: [P2; 3],
}

const UPPER_ARM: f64 = 0.17;
const FOREARM: f64 = 0.17;
const THIGH: f64 = 0.22;
const SHIN: f64 = 0.23;

fn limb(from: P2, side: f64, angle: f64, len: f64) -> P2 {
    [
        from[0] + side * angle.sin() * len,
        from[1] + angle.cos() * len,
    ]
}

/// Knee position for a hip/foot pair, bending outward.
fn knee(hip: P2, foot: P2, side: f64) -> P2 {
    let (dx, dy) = (foot[0] - hip[0], foot[1] - hip[1]);
    let d = (dx * dx + dy * dy)
        .sqrt()
        .min(THIGH + SHIN - 1e-9)
        .max(1e-9);
    let along = (THIGH * THIGH - SHIN * SHIN + d * d) / (2.0 * d);
    let off = (THIGH * THIGH - along * along).max(0.0).sqrt();
    let (ux, uy) = (dx / d, dy / d);
    let (nx, ny) = (uy * side, -ux * side);
    let base = [hip[0] + ux * along, hip[1] + uy * along];
    let k = [base[0] + nx * off, base[1] + ny * off];
    if (k[0] - hip[0]) * side >= 0.0 {
        k
    } else {
        [base[0] - nx * off, base[1] - ny * off]
    }
}

impl Figure {
    /// Pose of `kind` at `phase` radians.
    pub fn posed(kind: MotionKind, phase: f64) -> Self {
        let k = 0.5 * (1.0 - phase.cos());
        let drop = if kind == MotionKind::Squat {
            0.18 * k
        } else {
            0.0
        };
        let neck = [0.0, 0.2 + drop];
        let pelvis = [0.0, 0.55 + drop];
        let head = [0.0, 0.1 + drop];
        let arms: [(f64, f64); 2];
        let mut feet = [[-0.1, 1.0], [0.1, 1.0]];
        let mut straight_leg: Option<f64> = None;
        match kind {
            MotionKind::JumpingJack => {
                let a = 0.15 * PI + 0.75 * PI * k;
                arms = [(a, a), (a, a)];
                straight_leg = Some(0.03 + 0.22 * k);
            }
            MotionKind::Wave => {
                arms = [
                    (0.1 * PI, 0.1 * PI),
                    (0.75 * PI, 0.75 * PI + 0.25 * PI * phase.sin()),
                ];
                straight_leg = Some(0.04);
            }
            MotionKind::Squat => {
                let a = 0.15 * PI + 0.35 * PI * k;
                arms = [(a, a + 0.1 * PI * k), (a, a + 0.1 * PI * k)];
            }
            MotionKind::March => {
                let s = phase.sin();
                feet[0][1] -= 0.14 * s.max(0.0);
                feet[1][1] -= 0.14 * (-s).max(0.0);
                arms = [
                    (
                        0.1 * PI + 0.25 * PI * (-s).max(0.0),
                        0.1 * PI + 0.35 * PI * (-s).max(0.0),
                    ),
                    (
                        0.1 * PI + 0.25 * PI * s.max(0.0),
                        0.1 * PI + 0.35 * PI * s.max(0.0),
                    ),
                ];
            }
        }
        let mut capsules = Vec::with_capacity(10);
        let mut hands = [[0.0; 2]; 2];
        for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
            let hip = [0.07 * side, pelvis[1]];
            let (knee_p, foot) = match straight_leg {
                Some(angle) => {
                    let kp = limb(hip, side, angle, THIGH);
                    (kp, limb(kp, side, angle, SHIN))
                }
                None => (knee(hip, feet[i], side), feet[i]),
            };
            capsules.push(Capsule {
                a: hip,
                b: knee_p,
                radius: 0.055,
                part: Part::Pants,
            });
            capsules.push(Capsule {
                a: knee_p,
                b: foot,
                radius: 0.05,
                part: Part::Pants,
            });
        }
        capsules.push(Capsule {
            a: neck,
            b: pelvis,
            radius: 0.1,
            part: Part::Shirt,
        });
        for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
            let shoulder = [0.12 * side, neck[1] + 0.04];
            let elbow = limb(shoulder, side, arms[i].0, UPPER_ARM);
            let hand = limb(elbow, side, arms[i].1, FOREARM);
            hands[i] = hand;
            capsules.push(Capsule {
                a: shoulder,
                b: elbow,
                radius: 0.045,
                part: Part::Shirt,
            });
            capsules.push(Capsule {
                a: elbow,
                b: hand,
                radius: 0.04,
                part: Part::Skin,
            });
        }
        capsules.push(Capsule {
            a: head,
            b: head,
            radius: 0.1,
            part: Part::Skin,
        });
        Self {
            capsules,
            joints: [head, hands[0], hands[1]],
        }
    }

    pub fn part_at(&self, p: P2) -> Option<Part> {
        self.capsules
            .iter()
            .rev()
            .find(|c| c.contains(p))
            .map(|c| c.part)
    }

    /// Area centroid of the silhouette, by dense sampling.
    pub fn centroid(&self) -> P2 {
        const N: usize = 96;
        let (x0, x1, y0, y1) = (-0.7, 0.7, -0.25, 1.1);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for j in 0..N {
            for i in 0..N {
                let p = [
                    x0 + (x1 - x0) * (i as f64 + 0.5) / N as f64,
                    y0 + (y1 - y0) * (j as f64 + 0.5) / N as f64,
                ];
                if self.part_at(p).is_some() {
                    sx += p[0];
                    sy += p[1];
                    n += 1.0;
                }
            }
        }
        if n == 0.0 {
            [0.0, 0.5]
        } else {
            [sx / n, sy / n]
        }
    }
}

/// A figure placed in unit box coordinates `[0, 1]^2`, its silhouette
/// centroid at the box center and body height spanning `0.9 * scale`.
#[derive(Debug, Clone)]
pub struct PlacedFigure {
    figure: Figure,
    center: P2,
    scale: f64,
}

impl PlacedFigure {
    pub fn new(figure: Figure, scale: f64) -> Self {
        let center = figure.centroid();
        Self {
            figure,
            center,
            scale,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scale <= 0.0
    }

    fn to_body(&self, b: P2) -> P2 {
        let s = BODY_OCCUPANCY * self.scale;
        [
            self.center[0] + (b[0] - 0.5) / s,
            self.center[1] + (b[1] - 0.5) / s,
        ]
    }

    fn to_box(&self, p: P2) -> P2 {
        let s = BODY_OCCUPANCY * self.scale;
        [
            0.5 + (p[0] - self.center[0]) * s,
            0.5 + (p[1] - self.center[1]) * s,
        ]
    }

    /// Part under a point in box coordinates.
    pub fn sample(&self, b: P2) -> Option<Part> {
        if self.is_empty() {
            return None;
        }
        self.figure.part_at(self.to_body(b))
    }

    /// Joint positions in box coordinates.
    pub fn joints(&self) -> [P2; 3] {
        self.figure.joints.map(|j| self.to_box(j))
    }

    /// Coverage and mean color over an `n x n` supersampling of the box-space
    /// cell `[x0, x1] x [y0, y1]`.
    pub fn cell(
        &self,
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
        n: usize,
        id: &Identity,
    ) -> (f64, [f64; 3]) {
        let mut hits = 0usize;
        let mut col = [0.0; 3];
        for j in 0..n {
            for i in 0..n {
                let p = [
                    x0 + (x1 - x0) * (i as f64 + 0.5) / n as f64,
                    y0 + (y1 - y0) * (j as f64 + 0.5) / n as f64,
                ];
                if let Some(part) = self.sample(p) {
                    let c = part.color(id);
                    hits += 1;
                    for k in 0..3 {
                        col[k] += c[k];
                    }
                }
            }
        }
        if hits == 0 {
            return (0.0, [0.0; 3]);
        }
        let h = hits as f64;
        (h / (n * n) as f64, col.map(|c| c / h))
    }
}

/// Phase of frame `t` for a cycle of `period` frames.
pub fn phase_at(t: usize, period: f64, offset: f64) -> f64 {
    2.0 * PI * t as f64 / period + offset
}
