//! Independent reference computations written with explicit loops.
#![allow(dead_code)]

use ndarray::Array2;
use scenecomp_core::conditioning::MotionAttention;
use scenecomp_core::rope::RopeConfig;

pub fn matvec(w: &Array2<f64>, b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| b[i] + (0..w.ncols()).map(|j| w[[i, j]] * x[j]).sum::<f64>())
        .collect()
}

/// Rotates `v` pair by pair, looking up the axis of each pair by walking
/// the split.
pub fn rotate(v: &[f64], pos: [f64; 3], cfg: &RopeConfig) -> Vec<f64> {
    let mut out = v.to_vec();
    let mut start = 0;
    for axis in 0..3 {
        let d = cfg.axis_split[axis];
        for k in 0..d / 2 {
            let theta = pos[axis] / cfg.base.powf(2.0 * k as f64 / d as f64);
            let i = start + 2 * k;
            out[i] = v[i] * theta.cos() - v[i + 1] * theta.sin();
            out[i + 1] = v[i] * theta.sin() + v[i + 1] * theta.cos();
        }
        start += d;
    }
    out
}

/// Token box `[x1, x2) x [y1, y2)`.
pub type TokenBox = (usize, usize, usize, usize);

pub fn query_position(
    t: usize,
    x: usize,
    y: usize,
    b: Option<TokenBox>,
    hc: usize,
    wc: usize,
    alpha: f64,
) -> [f64; 3] {
    match b {
        Some((x1, y1, x2, y2)) if x >= x1 && x < x2 && y >= y1 && y < y2 => [
            t as f64,
            (x - x1) as f64 * wc as f64 / (x2 - x1) as f64,
            (y - y1) as f64 * hc as f64 / (y2 - y1) as f64,
        ],
        _ => [t as f64, alpha, alpha],
    }
}

/// Result of [`cross_attention`]: residual rows and, per frame and head,
/// the attention rows.
pub struct CrossAttentionOracle {
    pub out: Vec<Vec<f64>>,
    pub probs: Vec<Vec<Vec<Vec<f64>>>>,
}

#[allow(clippy::too_many_arguments)]
pub fn cross_attention(
    x: &Array2<f64>,
    motion: &Array2<f64>,
    w: &MotionAttention<f64>,
    boxes: &[Option<TokenBox>],
    grid_hw: (usize, usize),
    canon_hw: (usize, usize),
    cfg: &RopeConfig,
    hard_mask: bool,
) -> CrossAttentionOracle {
    let (gh, gw) = grid_hw;
    let (hc, wc) = canon_hw;
    let d = w.query.weight.nrows();
    let heads = w.heads;
    let dh = d / heads;
    let frames = boxes.len();
    let mut out = Vec::new();
    let mut probs = Vec::new();
    for t in 0..frames {
        let mut keys = Vec::new();
        let mut vals = Vec::new();
        for yc in 0..hc {
            for xc in 0..wc {
                let row: Vec<f64> = motion.row(t * hc * wc + yc * wc + xc).to_vec();
                let e = matvec(&w.embed.weight, w.embed.bias.as_slice().unwrap(), &row);
                let k = matvec(&w.key.weight, w.key.bias.as_slice().unwrap(), &e);
                let v = matvec(&w.value.weight, w.value.bias.as_slice().unwrap(), &e);
                let pos = [t as f64, xc as f64, yc as f64];
                let k: Vec<f64> = (0..heads)
                    .flat_map(|h| rotate(&k[h * dh..(h + 1) * dh], pos, cfg))
                    .collect();
                keys.push(k);
                vals.push(v);
            }
        }
        let mut frame_probs = vec![Vec::new(); heads];
        for y in 0..gh {
            for xq in 0..gw {
                let row: Vec<f64> = x.row(t * gh * gw + y * gw + xq).to_vec();
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let xa: Vec<f64> = (0..d)
                    .map(|i| {
                        (row[i] - mean) / (var + 1e-5).sqrt() * w.norm_gamma[i] + w.norm_beta[i]
                    })
                    .collect();
                let q = matvec(&w.query.weight, w.query.bias.as_slice().unwrap(), &xa);
                let pos = query_position(t, xq, y, boxes[t], hc, wc, cfg.background_label);
                let mut att = vec![0.0; d];
                for h in 0..heads {
                    let qh = rotate(&q[h * dh..(h + 1) * dh], pos, cfg);
                    let logits: Vec<f64> = keys
                        .iter()
                        .map(|k| {
                            (0..dh).map(|i| qh[i] * k[h * dh + i]).sum::<f64>() / (dh as f64).sqrt()
                        })
                        .collect();
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                    let z: f64 = ex.iter().sum();
                    let p: Vec<f64> = ex.iter().map(|e| e / z).collect();
                    for (j, pj) in p.iter().enumerate() {
                        for i in 0..dh {
                            att[h * dh + i] += pj * vals[j][h * dh + i];
                        }
                    }
                    frame_probs[h].push(p);
                }
                let mut o = matvec(&w.output.weight, w.output.bias.as_slice().unwrap(), &att);
                let inside = matches!(boxes[t], Some((x1, y1, x2, y2)) if xq >= x1 && xq < x2 && y >= y1 && y < y2);
                if hard_mask && !inside {
                    o.iter_mut().for_each(|v| *v = 0.0);
                }
                out.push(o);
            }
        }
        probs.push(frame_probs);
    }
    CrossAttentionOracle { out, probs }
}

/// Average of each channel over every `p x p` patch, computed by summing
/// pixels directly.
pub fn patch_means(frames: &ndarray::Array4<f64>, p: usize) -> ndarray::Array4<f64> {
    let (f, hp, wp, c) = frames.dim();
    let mut out = ndarray::Array4::zeros((f, hp / p, wp / p, c));
    for t in 0..f {
        for y in 0..hp / p {
            for x in 0..wp / p {
                for ch in 0..c {
                    let mut s = 0.0;
                    for dy in 0..p {
                        for dx in 0..p {
                            s += frames[[t, y * p + dy, x * p + dx, ch]];
                        }
                    }
                    out[[t, y, x, ch]] = s / (p * p) as f64;
                }
            }
        }
    }
    out
}

/// Rotation about unit axis `k` by `angle`, from the Rodrigues formula
/// written out entry by entry.
pub fn rodrigues(k: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    let (x, y, z) = (k[0] / n, k[1] / n, k[2] / n);
    let (c, s) = (angle.cos(), angle.sin());
    let v = 1.0 - c;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
    ]
}

/// `R p + t`, one coordinate at a time.
pub fn to_camera(r: &[[f64; 3]; 3], t: &[f64; 3], p: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
    }
    out
}

/// `R^T (p - t)`.
pub fn to_world(r: &[[f64; 3]; 3], t: &[f64; 3], p: &[f64; 3]) -> [f64; 3] {
    let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
    let mut out = [0.0; 3];
    for j in 0..3 {
        out[j] = r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2];
    }
    out
}

/// Pinhole pixel coordinates `(f X / Z + cx, f Y / Z + cy)`.
pub fn pinhole(f: f64, cx: f64, cy: f64, p: &[f64; 3]) -> (f64, f64) {
    (f * p[0] / p[2] + cx, f * p[1] / p[2] + cy)
}

/// Depth at which a body of height `h` fills 90% of a box of side `a`.
pub fn root_depth(f: f64, h: f64, a: f64) -> f64 {
    f * h / (0.9 * a)
}

/// Camera-frame point under pixel `(u, v)` at depth `z`.
pub fn unproject(f: f64, cx: f64, cy: f64, u: f64, v: f64, z: f64) -> [f64; 3] {
    [(u - cx) * z / f, (v - cy) * z / f, z]
}

/// Box center, side and depth of a root given in the frame-0 camera,
/// moved by `offset` and seen from camera `(r, t)`; frame 0 is `(r0, t0)`.
#[allow(clippy::too_many_arguments)]
pub fn propagated_box(
    p0: &[f64; 3],
    offset: &[f64; 3],
    r0: &[[f64; 3]; 3],
    t0: &[f64; 3],
    r: &[[f64; 3]; 3],
    t: &[f64; 3],
    f: f64,
    c: (f64, f64),
    h: f64,
) -> (f64, f64, f64, f64) {
    let moved = [p0[0] + offset[0], p0[1] + offset[1], p0[2] + offset[2]];
    let world = to_world(r0, t0, &moved);
    let cam = to_camera(r, t, &world);
    let (u, v) = pinhole(f, c.0, c.1, &cam);
    (u, v, f * h / (0.9 * cam[2]), cam[2])
}
