use ndarray::{s, Array1, Array3, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use super::motion::CanonicalMotionSequence;
use crate::error::{invalid, shape, Result};
use crate::geometry::io::{decode_raw_f32, encode_raw_f32};
use crate::geometry::{RgbdFrame, TokenGrid};
use crate::nn::Linear;
use crate::scalar::Scalar;

/// Which part of the context a frame belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Env,
    Identity,
    Memory,
}

/// Maps `[0, 1]` image values to the symmetric latent range `[-1, 1]`.
pub fn to_latent<S: Scalar>(x: S) -> S {
    S::lit(2.0) * x - S::one()
}

pub fn from_latent<S: Scalar>(z: S) -> S {
    (z + S::one()) / S::lit(2.0)
}

/// Stacks frames into a `F x H x W x 4` latent array.
pub fn frames_to_latent<S: Scalar>(frames: &[RgbdFrame<S>]) -> Result<Array4<S>> {
    let first = frames.first().ok_or_else(|| invalid("no frames"))?;
    let (h, w) = (first.height(), first.width());
    let mut out = Array4::zeros((frames.len(), h, w, 4));
    for (i, f) in frames.iter().enumerate() {
        if (f.height(), f.width()) != (h, w) {
            return Err(invalid(format!(
                "frame {i} is {}x{}, expected {h}x{w}",
                f.height(),
                f.width()
            )));
        }
        out.slice_mut(s![i, .., .., ..])
            .assign(&f.to_rgbd().mapv(to_latent));
    }
    Ok(out)
}

/// Splits `F x (H p) x (W p) x C` pixels into `F x H x W x (p p C)` patch
/// vectors. Within a patch the order is `(dy, dx, c)`.
pub fn patchify<S: Scalar>(frames: &ArrayView4<S>, patch: usize) -> Result<Array4<S>> {
    let (f, hp, wp, c) = frames.dim();
    if patch == 0 || hp % patch != 0 || wp % patch != 0 {
        return Err(invalid(format!(
            "{hp}x{wp} pixels do not tile into {patch}x{patch} patches"
        )));
    }
    let (h, w) = (hp / patch, wp / patch);
    let mut out = Array4::zeros((f, h, w, patch * patch * c));
    for t in 0..f {
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in 0..patch {
                    for dx in 0..patch {
                        for ch in 0..c {
                            out[[t, y, x, k]] = frames[[t, y * patch + dy, x * patch + dx, ch]];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<S: Scalar>(
    tokens: &ArrayView4<S>,
    patch: usize,
    channels: usize,
) -> Result<Array4<S>> {
    let (f, h, w, d) = tokens.dim();
    if patch == 0 || d != patch * patch * channels {
        return Err(shape(format!(
            "{d} token channels do not match patch {patch} with {channels} channels"
        )));
    }
    let mut out = Array4::zeros((f, h * patch, w * patch, channels));
    for t in 0..f {
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in 0..patch {
                    for dx in 0..patch {
                        for ch in 0..channels {
                            out[[t, y * patch + dy, x * patch + dx, ch]] = tokens[[t, y, x, k]];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Linear map applied to each flattened patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding<S> {
    pub patch: usize,
    pub channels: usize,
    pub linear: Linear<S>,
}

impl<S: Scalar> PatchEmbedding<S> {
    pub fn new(patch: usize, channels: usize, linear: Linear<S>) -> Result<Self> {
        if patch == 0 || channels == 0 {
            return Err(invalid("patch size and channel count must be positive"));
        }
        if linear.input_dim() != patch * patch * channels {
            return Err(shape(format!(
                "embedding takes {} inputs, patches have {}",
                linear.input_dim(),
                patch * patch * channels
            )));
        }
        Ok(Self {
            patch,
            channels,
            linear,
        })
    }

    /// Identity on the flattened patch: tokens are the raw patch vectors.
    pub fn flatten(patch: usize, channels: usize) -> Self {
        let n = patch * patch * channels;
        Self {
            patch,
            channels,
            linear: Linear {
                weight: ndarray::Array2::eye(n),
                bias: Array1::zeros(n),
            },
        }
    }

    /// Per-channel average over the patch.
    pub fn mean(patch: usize, channels: usize) -> Self {
        let n = patch * patch;
        let mut lin = Linear::zeros(n * channels, channels);
        let wgt = S::one() / S::lit(n as f64);
        for k in 0..n {
            for c in 0..channels {
                lin.weight[[c, k * channels + c]] = wgt;
            }
        }
        Self {
            patch,
            channels,
            linear: lin,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }
}

/// Embeds `F x (H p) x (W p) x C` frames into an `F x H x W x C_in` token grid.
pub fn encode_segment<S: Scalar>(
    frames: &ArrayView4<S>,
    embed: &PatchEmbedding<S>,
    grid: &TokenGrid,
) -> Result<Array4<S>> {
    let (f, hp, wp, c) = frames.dim();
    if f == 0 {
        return Err(invalid("cannot encode an empty segment"));
    }
    if embed.patch != grid.patch || hp != grid.height_px() || wp != grid.width_px() {
        return Err(invalid(format!(
            "frames are {hp}x{wp} px, grid expects {}x{} px with patch {}",
            grid.height_px(),
            grid.width_px(),
            grid.patch
        )));
    }
    if c != embed.channels {
        return Err(invalid(format!(
            "frames have {c} channels, embedding expects {}",
            embed.channels
        )));
    }
    let patches = patchify(frames, embed.patch)?;
    let rows = f * grid.tokens();
    let flat = patches
        .into_shape_with_order((rows, embed.patch * embed.patch * c))
        .map_err(|e| shape(e.to_string()))?;
    let out = embed.linear.forward(&flat.view());
    out.into_shape_with_order((f, grid.height, grid.width, embed.output_dim()))
        .map_err(|e| shape(e.to_string()))
}

/// Everything a generation request is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet<S> {
    pub env: Vec<RgbdFrame<S>>,
    pub motion: CanonicalMotionSequence<S>,
    pub identity: Vec<RgbdFrame<S>>,
    pub memory: Option<Vec<RgbdFrame<S>>>,
    /// `T x H x W` pixel mask, 1 where content is synthesized.
    pub mask: Array3<S>,
    pub global_token: Option<Array1<S>>,
}

impl<S: Scalar> ConditionSet<S> {
    pub fn frames(&self) -> usize {
        self.env.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.env.is_empty() {
            return Err(invalid("condition set has no environment frames"));
        }
        if self.mask.len_of(Axis(0)) != self.env.len() {
            return Err(invalid(format!(
                "mask has {} frames, environment has {}",
                self.mask.len_of(Axis(0)),
                self.env.len()
            )));
        }
        if self.mask.iter().any(|m| *m != S::zero() && *m != S::one()) {
            return Err(invalid("mask values must be 0 or 1"));
        }
        if self.motion.frames() != self.env.len() {
            return Err(invalid(format!(
                "motion has {} frames, environment has {}",
                self.motion.frames(),
                self.env.len()
            )));
        }
        let (h, w) = (self.env[0].height(), self.env[0].width());
        if self.mask.dim().1 != h || self.mask.dim().2 != w {
            return Err(invalid(
                "mask resolution differs from the environment frames",
            ));
        }
        let mem = self.memory.iter().flatten();
        for f in self.env.iter().chain(self.identity.iter()).chain(mem) {
            if (f.height(), f.width()) != (h, w) {
                return Err(invalid("condition frames differ in resolution"));
            }
        }
        Ok(())
    }
}

/// Token-level context: env, identity and memory frames in that order, with
/// a trailing mask channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSequence<S> {
    /// `L x H x W x (C_in + 1)`
    pub tokens: Array4<S>,
    pub labels: Vec<Segment>,
    pub global_token: Option<Array1<S>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContextSidecar {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    segments: Vec<Segment>,
    global_token: Option<Vec<f64>>,
}

impl<S: Scalar> ContextSequence<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.tokens.dim().3
    }

    /// Frame count per segment, in context order.
    pub fn segment_lengths(&self) -> [(Segment, usize); 3] {
        let count = |s| self.labels.iter().filter(|l| **l == s).count();
        [
            (Segment::Env, count(Segment::Env)),
            (Segment::Identity, count(Segment::Identity)),
            (Segment::Memory, count(Segment::Memory)),
        ]
    }

    /// Raw float payload of the token grid.
    pub fn to_raw(&self) -> Vec<u8> {
        let (l, h, w, _) = self.tokens.dim();
        encode_raw_f32(w, h, l, self.tokens.iter().copied())
    }

    /// JSON description of shapes and segment labels.
    pub fn sidecar(&self) -> String {
        let (l, h, w, c) = self.tokens.dim();
        let sc = ContextSidecar {
            frames: l,
            height: h,
            width: w,
            channels: c,
            segments: self.labels.clone(),
            global_token: self
                .global_token
                .as_ref()
                .map(|g| g.iter().map(|v| v.as_f64()).collect()),
        };
        serde_json::to_string_pretty(&sc).expect("sidecar serializes")
    }

    pub fn from_raw(raw: &[u8], sidecar: &str) -> Result<Self> {
        let sc: ContextSidecar =
            serde_json::from_str(sidecar).map_err(|e| invalid(format!("context sidecar: {e}")))?;
        let (w, h, l, vals) = decode_raw_f32(raw)?;
        if (w, h, l) != (sc.width, sc.height, sc.frames) || sc.segments.len() != l {
            return Err(invalid("context payload does not match its sidecar"));
        }
        let data: Vec<S> = vals.into_iter().map(|v| S::lit(v as f64)).collect();
        let tokens = Array4::from_shape_vec((l, h, w, sc.channels), data)
            .map_err(|_| invalid("context payload has the wrong number of values"))?;
        Ok(Self {
            tokens,
            labels: sc.segments,
            global_token: sc.global_token.map(|g| g.into_iter().map(S::lit).collect()),
        })
    }
}

/// Builds the context: every frame mapped to latent range, embedded, then a
/// mask channel appended. Env frames carry the token-level max of the pixel
/// mask; identity and memory frames carry 0.
pub fn assemble_context<S: Scalar>(
    cond: &ConditionSet<S>,
    embed: &PatchEmbedding<S>,
    grid: &TokenGrid,
) -> Result<ContextSequence<S>> {
    cond.validate()?;
    let mut labels = vec![Segment::Env; cond.env.len()];
    let mut frames: Vec<RgbdFrame<S>> = cond.env.clone();
    frames.extend(cond.identity.iter().cloned());
    labels.extend(std::iter::repeat_n(Segment::Identity, cond.identity.len()));
    if let Some(mem) = &cond.memory {
        frames.extend(mem.iter().cloned());
        labels.extend(std::iter::repeat_n(Segment::Memory, mem.len()));
    }
    let latent = frames_to_latent(&frames)?;
    let emb = encode_segment(&latent.view(), embed, grid)?;
    let c_in = emb.dim().3;
    let mut tokens = Array4::zeros((labels.len(), grid.height, grid.width, c_in + 1));
    tokens.slice_mut(s![.., .., .., ..c_in]).assign(&emb);
    let p = grid.patch;
    for t in 0..cond.env.len() {
        for y in 0..grid.height {
            for x in 0..grid.width {
                let m = cond
                    .mask
                    .slice(s![t, y * p..(y + 1) * p, x * p..(x + 1) * p])
                    .iter()
                    .copied()
                    .fold(S::zero(), S::max);
                tokens[[t, y, x, c_in]] = m;
            }
        }
    }
    Ok(ContextSequence {
        tokens,
        labels,
        global_token: cond.global_token.clone(),
    })
}
