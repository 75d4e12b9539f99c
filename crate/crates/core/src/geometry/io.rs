//! Text and binary file formats for scenes, camera paths and rendered frames.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::camera::{CameraIntrinsics, CameraPose};
use super::raster::{ColoredPoint, PointCloud};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-comment lines with their 1-based line numbers; `#` starts a comment.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn parse_floats<S: Scalar>(line: &str, origin: &str, lineno: usize) -> Result<Vec<S>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(S::lit)
                .ok_or_else(|| parse_err(origin, lineno, format!("`{tok}` is not a finite number")))
        })
        .collect()
}

/// Parses `x y z r g b` lines.
pub fn parse_point_cloud<S: Scalar>(text: &str, origin: &str) -> Result<PointCloud<S>> {
    let mut points = Vec::new();
    for (lineno, line) in data_lines(text) {
        let vals = parse_floats::<S>(line, origin, lineno)?;
        if vals.len() != 6 {
            return Err(parse_err(
                origin,
                lineno,
                format!("expected 6 values `x y z r g b`, found {}", vals.len()),
            ));
        }
        let color = [vals[3], vals[4], vals[5]];
        if color.iter().any(|c| *c < S::zero() || *c > S::one()) {
            return Err(parse_err(
                origin,
                lineno,
                "color channels must lie in [0, 1]",
            ));
        }
        points.push(ColoredPoint {
            position: [vals[0], vals[1], vals[2]],
            color,
        });
    }
    if points.is_empty() {
        return Err(parse_err(origin, 0, "point cloud file has no points"));
    }
    PointCloud::new(points)
}

pub fn load_point_cloud<S: Scalar>(path: &Path) -> Result<PointCloud<S>> {
    parse_point_cloud(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn format_point_cloud<S: Scalar>(cloud: &PointCloud<S>) -> String {
    let mut out = String::from("# x y z r g b\n");
    for p in &cloud.points {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color;
        out.push_str(&format!("{x} {y} {z} {r} {g} {b}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath<S> {
    pub intrinsics: Option<CameraIntrinsics<S>>,
    pub poses: Vec<CameraPose<S>>,
}

/// Parses a camera path: an optional `f cx cy W H` header line followed by
/// one `r00 .. r22 tx ty tz` line per frame.
pub fn parse_camera_path<S: Scalar>(text: &str, origin: &str) -> Result<CameraPath<S>> {
    let mut intrinsics = None;
    let mut poses = Vec::new();
    for (lineno, line) in data_lines(text) {
        let vals = parse_floats::<S>(line, origin, lineno)?;
        match vals.len() {
            5 => {
                if intrinsics.is_some() || !poses.is_empty() {
                    return Err(parse_err(
                        origin,
                        lineno,
                        "intrinsics header must be the first data line",
                    ));
                }
                let (w, h) = (vals[3].as_f64(), vals[4].as_f64());
                if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
                    return Err(parse_err(
                        origin,
                        lineno,
                        "image width and height must be positive integers",
                    ));
                }
                let intr = CameraIntrinsics::new(vals[0], vals[1], vals[2], w as usize, h as usize)
                    .map_err(|e| parse_err(origin, lineno, e.to_string()))?;
                intrinsics = Some(intr);
            }
            12 => {
                let r = [
                    [vals[0], vals[1], vals[2]],
                    [vals[3], vals[4], vals[5]],
                    [vals[6], vals[7], vals[8]],
                ];
                let pose = CameraPose::new(r, [vals[9], vals[10], vals[11]])
                    .map_err(|e| parse_err(origin, lineno, e.to_string()))?;
                poses.push(pose);
            }
            n => {
                return Err(parse_err(
                    origin,
                    lineno,
                    format!("expected 12 pose values or a 5-value intrinsics header, found {n}"),
                ))
            }
        }
    }
    if poses.is_empty() {
        return Err(parse_err(origin, 0, "camera path has no frames"));
    }
    Ok(CameraPath { intrinsics, poses })
}

pub fn load_camera_path<S: Scalar>(path: &Path) -> Result<CameraPath<S>> {
    parse_camera_path(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn format_camera_path<S: Scalar>(path: &CameraPath<S>) -> String {
    let mut out = String::new();
    if let Some(i) = &path.intrinsics {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            i.f, i.cx, i.cy, i.width, i.height
        ));
    }
    for pose in &path.poses {
        let vals: Vec<String> = pose
            .rotation
            .iter()
            .flatten()
            .chain(pose.translation.iter())
            .map(|v| v.to_string())
            .collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

/// Binary PPM (P6) of an `H x W x 3` image in `[0, 1]`.
pub fn encode_ppm<S: Scalar>(rgb: &Array3<S>) -> Result<Vec<u8>> {
    let (h, w, c) = rgb.dim();
    if c != 3 {
        return Err(invalid(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(
        rgb.iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Array3<u8>> {
    let bad = |m: &str| Error::CheckpointCorrupt(format!("PPM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("unsupported variant"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let data = bytes
        .get(pos..pos + w * h * 3)
        .ok_or_else(|| bad("truncated pixels"))?;
    Array3::from_shape_vec((h, w, 3), data.to_vec()).map_err(|_| bad("shape"))
}

/// Raw float stack: ASCII header `W H T\n`, then `T*H*W*C` little-endian
/// `f32` values in row-major order.
pub fn encode_raw_f32<S: Scalar>(
    width: usize,
    height: usize,
    frames: usize,
    data: impl IntoIterator<Item = S>,
) -> Vec<u8> {
    let mut out = format!("{width} {height} {frames}\n").into_bytes();
    for v in data {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

/// Inverse of [`encode_raw_f32`]: returns `(W, H, T, values)`.
pub fn decode_raw_f32(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| invalid("raw float file has no header line"))?;
    let header =
        std::str::from_utf8(&bytes[..nl]).map_err(|_| invalid("raw float header is not UTF-8"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| invalid(format!("bad header field `{t}`")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(invalid("raw float header must be `W H T`"));
    }
    let body = &bytes[nl + 1..];
    if !body.len().is_multiple_of(4) {
        return Err(invalid(
            "raw float payload is not a whole number of f32 values",
        ));
    }
    let vals = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims[0], dims[1], dims[2], vals))
}

/// Depth stack of `T` frames as a raw float file.
pub fn encode_depth_stack<S: Scalar>(depths: &[Array2<S>]) -> Result<Vec<u8>> {
    let (h, w) = depths
        .first()
        .map(|d| d.dim())
        .ok_or_else(|| invalid("no depth frames"))?;
    if depths.iter().any(|d| d.dim() != (h, w)) {
        return Err(invalid("depth frames differ in size"));
    }
    Ok(encode_raw_f32(
        w,
        h,
        depths.len(),
        depths.iter().flat_map(|d| d.iter().copied()),
    ))
}
