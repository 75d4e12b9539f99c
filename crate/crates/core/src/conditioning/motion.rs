use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::geometry::io::{decode_raw_f32, encode_raw_f32};
use crate::geometry::{PlacementTrack, RootTrajectory, Vec3, BODY_OCCUPANCY};
use crate::nn::{
    join, layer_norm, layer_norm_backward, multi_head_attention, multi_head_attention_backward,
    AttentionCache, Linear, ParamSet,
};
use crate::rope::{canonical_key_positions, grounded_query_positions, RopeConfig, RopeTable};
use crate::scalar::Scalar;

/// Translation-free motion maps at a fixed body occupancy, plus the root
/// offsets that place them in the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalMotionSequence<S> {
    /// `T x h_c x w_c x C_u`, values in `[0, 1]`.
    pub maps: Array4<S>,
    pub occupancy: f64,
    pub root: RootTrajectory<S>,
}

#[derive(Serialize, Deserialize)]
struct MotionSidecar {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    occupancy: f64,
    body_height: f64,
    root_offsets: Vec<[f64; 3]>,
}

impl<S: Scalar> CanonicalMotionSequence<S> {
    pub fn new(maps: Array4<S>, root: RootTrajectory<S>) -> Result<Self> {
        if maps.iter().any(|v| !(*v >= S::zero() && *v <= S::one())) {
            return Err(invalid("motion map values must lie in [0, 1]"));
        }
        let (t, h, w, c) = maps.dim();
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(invalid(format!(
                "motion maps have an empty axis: {t}x{h}x{w}x{c}"
            )));
        }
        if root.len() != t {
            return Err(invalid(format!(
                "{} root offsets for {t} motion frames",
                root.len()
            )));
        }
        Ok(Self {
            maps,
            occupancy: BODY_OCCUPANCY,
            root,
        })
    }

    pub fn frames(&self) -> usize {
        self.maps.dim().0
    }

    /// `(h_c, w_c)`
    pub fn canonical_size(&self) -> (usize, usize) {
        (self.maps.dim().1, self.maps.dim().2)
    }

    pub fn channels(&self) -> usize {
        self.maps.dim().3
    }

    /// Motion maps as `(T h_c w_c) x C_u` rows in `(t, y, x)` order.
    pub fn tokens(&self) -> Array2<S> {
        let (t, h, w, c) = self.maps.dim();
        self.maps
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((t * h * w, c))
            .expect("contiguous maps")
    }

    pub fn to_raw(&self) -> Vec<u8> {
        let (t, h, w, _) = self.maps.dim();
        encode_raw_f32(w, h, t, self.maps.iter().copied())
    }

    pub fn sidecar(&self) -> String {
        let (t, h, w, c) = self.maps.dim();
        let sc = MotionSidecar {
            frames: t,
            height: h,
            width: w,
            channels: c,
            occupancy: self.occupancy,
            body_height: self.root.body_height.as_f64(),
            root_offsets: self
                .root
                .offsets
                .iter()
                .map(|o| [o[0].as_f64(), o[1].as_f64(), o[2].as_f64()])
                .collect(),
        };
        serde_json::to_string_pretty(&sc).expect("sidecar serializes")
    }

    pub fn from_raw(raw: &[u8], sidecar: &str) -> Result<Self> {
        let sc: MotionSidecar =
            serde_json::from_str(sidecar).map_err(|e| invalid(format!("motion sidecar: {e}")))?;
        let (w, h, t, vals) = decode_raw_f32(raw)?;
        if (w, h, t) != (sc.width, sc.height, sc.frames) {
            return Err(invalid("motion payload does not match its sidecar"));
        }
        let maps = Array4::from_shape_vec(
            (t, h, w, sc.channels),
            vals.into_iter().map(|v| S::lit(v as f64)).collect(),
        )
        .map_err(|_| invalid("motion payload has the wrong number of values"))?;
        let offsets: Vec<Vec3<S>> = sc
            .root_offsets
            .iter()
            .map(|o| [S::lit(o[0]), S::lit(o[1]), S::lit(o[2])])
            .collect();
        let mut seq = Self::new(maps, RootTrajectory::new(offsets, S::lit(sc.body_height))?)?;
        seq.occupancy = sc.occupancy;
        Ok(seq)
    }
}

/// Behavior switches for the motion pathway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MotionOptions {
    /// Zero the residual of queries outside their frame's box instead of
    /// letting them attend through the background label.
    pub hard_mask: bool,
}

/// Weights of the motion cross-attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionAttention<S> {
    pub heads: usize,
    pub norm_gamma: Array1<S>,
    pub norm_beta: Array1<S>,
    /// Motion channels to model width.
    pub embed: Linear<S>,
    pub query: Linear<S>,
    pub key: Linear<S>,
    pub value: Linear<S>,
    /// Zero at initialization.
    pub output: Linear<S>,
}

impl<S: Scalar> MotionAttention<S> {
    pub fn new<R: Rng>(
        rng: &mut R,
        dim: usize,
        motion_channels: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(invalid(format!(
                "width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            norm_gamma: Array1::ones(dim),
            norm_beta: Array1::zeros(dim),
            embed: Linear::random(rng, motion_channels, dim),
            query: Linear::random(rng, dim, dim),
            key: Linear::random(rng, dim, dim),
            value: Linear::random(rng, dim, dim),
            output: Linear::zeros(dim, dim),
        })
    }

    /// Same layout, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear<S>| Linear::zeros(l.input_dim(), l.output_dim());
        Self {
            heads: self.heads,
            norm_gamma: Array1::zeros(self.norm_gamma.len()),
            norm_beta: Array1::zeros(self.norm_beta.len()),
            embed: z(&self.embed),
            query: z(&self.query),
            key: z(&self.key),
            value: z(&self.value),
            output: z(&self.output),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn motion_channels(&self) -> usize {
        self.embed.input_dim()
    }
}

impl<S: Scalar> ParamSet<S> for MotionAttention<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        self.norm_gamma.visit(&join(prefix, "norm.gamma"), f);
        self.norm_beta.visit(&join(prefix, "norm.beta"), f);
        self.embed.visit(&join(prefix, "embed"), f);
        self.query.visit(&join(prefix, "q"), f);
        self.key.visit(&join(prefix, "k"), f);
        self.value.visit(&join(prefix, "v"), f);
        self.output.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        self.norm_gamma.visit_mut(&join(prefix, "norm.gamma"), f);
        self.norm_beta.visit_mut(&join(prefix, "norm.beta"), f);
        self.embed.visit_mut(&join(prefix, "embed"), f);
        self.query.visit_mut(&join(prefix, "q"), f);
        self.key.visit_mut(&join(prefix, "k"), f);
        self.value.visit_mut(&join(prefix, "v"), f);
        self.output.visit_mut(&join(prefix, "out"), f);
    }
}

/// Rotations and box membership for one clip, shared by every block.
#[derive(Debug, Clone)]
pub struct MotionGeometry<S> {
    pub frames: usize,
    pub queries_per_frame: usize,
    pub keys_per_frame: usize,
    query_rope: RopeTable<S>,
    key_rope: RopeTable<S>,
    inside: Vec<bool>,
}

impl<S: Scalar> MotionGeometry<S> {
    pub fn new(
        track: &PlacementTrack<S>,
        canonical_h: usize,
        canonical_w: usize,
        cfg: &RopeConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let frames = track.len();
        let qpos = grounded_query_positions(track, frames, canonical_h, canonical_w, cfg)?;
        let kpos = canonical_key_positions(frames, canonical_h, canonical_w);
        let g = track.grid;
        let mut inside = Vec::with_capacity(qpos.len());
        for t in 0..frames {
            let b = track.get(t);
            for y in 0..g.height {
                for x in 0..g.width {
                    inside.push(b.is_some_and(|b| b.contains(x, y)));
                }
            }
        }
        Ok(Self {
            frames,
            queries_per_frame: g.tokens(),
            keys_per_frame: canonical_h * canonical_w,
            query_rope: RopeTable::new(&qpos, cfg),
            key_rope: RopeTable::new(&kpos, cfg),
            inside,
        })
    }

    /// Whether each query (in `(t, y, x)` order) lies inside its frame's box.
    pub fn inside(&self) -> &[bool] {
        &self.inside
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MotionCache<S> {
    normed: Array2<S>,
    inv_std: Array1<S>,
    adjusted: Array2<S>,
    q: Array2<S>,
    motion: Array2<S>,
    embedded: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    attended: Array2<S>,
    attention: Vec<AttentionCache<S>>,
    hard_mask: bool,
}

impl<S: Scalar> MotionCache<S> {
    /// Attention probabilities of frame `t`, one `N x M` matrix per head.
    pub fn probabilities(&self, t: usize) -> &[Array2<S>] {
        &self.attention[t].probs
    }
}

fn frame_rows(
    t: usize,
    n: usize,
) -> ndarray::SliceInfo<[ndarray::SliceInfoElem; 2], ndarray::Ix2, ndarray::Ix2> {
    s![t * n..(t + 1) * n, ..]
}

impl<S: Scalar> MotionAttention<S> {
    fn check(
        &self,
        x: &ArrayView2<S>,
        motion: &ArrayView2<S>,
        geo: &MotionGeometry<S>,
    ) -> Result<()> {
        if x.nrows() != geo.frames * geo.queries_per_frame || x.ncols() != self.dim() {
            return Err(shape(format!(
                "queries are {}x{}, expected {}x{}",
                x.nrows(),
                x.ncols(),
                geo.frames * geo.queries_per_frame,
                self.dim()
            )));
        }
        if motion.nrows() != geo.frames * geo.keys_per_frame
            || motion.ncols() != self.motion_channels()
        {
            return Err(invalid(format!(
                "motion tokens are {}x{}, expected {}x{}",
                motion.nrows(),
                motion.ncols(),
                geo.frames * geo.keys_per_frame,
                self.motion_channels()
            )));
        }
        Ok(())
    }

    /// Residual for `T N x D` video tokens given `T M x C_u` motion tokens.
    pub fn forward(
        &self,
        x: &ArrayView2<S>,
        motion: &ArrayView2<S>,
        geo: &MotionGeometry<S>,
        opts: MotionOptions,
    ) -> Result<(Array2<S>, MotionCache<S>)> {
        self.check(x, motion, geo)?;
        let (normed, inv_std) = layer_norm(x);
        let adjusted = &normed * &self.norm_gamma + &self.norm_beta;
        let mut q = self.query.forward(&adjusted.view());
        geo.query_rope.rotate(&mut q);
        let embedded = self.embed.forward(motion);
        let mut k = self.key.forward(&embedded.view());
        geo.key_rope.rotate(&mut k);
        let v = self.value.forward(&embedded.view());

        let (n, m) = (geo.queries_per_frame, geo.keys_per_frame);
        let mut attended = Array2::zeros((x.nrows(), self.dim()));
        let mut attention = Vec::with_capacity(geo.frames);
        for t in 0..geo.frames {
            let (o, cache) = multi_head_attention(
                &q.slice(frame_rows(t, n)),
                &k.slice(frame_rows(t, m)),
                &v.slice(frame_rows(t, m)),
                self.heads,
                None,
            );
            attended.slice_mut(frame_rows(t, n)).assign(&o);
            attention.push(cache);
        }
        let mut out = self.output.forward(&attended.view());
        if opts.hard_mask {
            zero_outside(&mut out, &geo.inside);
        }
        Ok((
            out,
            MotionCache {
                normed,
                inv_std,
                adjusted,
                q,
                motion: motion.to_owned(),
                embedded,
                k,
                v,
                attended,
                attention,
                hard_mask: opts.hard_mask,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input tokens.
    pub fn backward(
        &self,
        cache: &MotionCache<S>,
        geo: &MotionGeometry<S>,
        d_out: &ArrayView2<S>,
        grad: &mut MotionAttention<S>,
    ) -> Array2<S> {
        let mut dy = d_out.to_owned();
        if cache.hard_mask {
            zero_outside(&mut dy, &geo.inside);
        }
        self.output
            .accumulate_grads(&cache.attended.view(), &dy.view(), &mut grad.output);
        let d_att = self.output.input_grad(&dy.view());

        let (n, m) = (geo.queries_per_frame, geo.keys_per_frame);
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for t in 0..geo.frames {
            let (gq, gk, gv) = multi_head_attention_backward(
                &cache.q.slice(frame_rows(t, n)),
                &cache.k.slice(frame_rows(t, m)),
                &cache.v.slice(frame_rows(t, m)),
                &cache.attention[t],
                &d_att.slice(frame_rows(t, n)),
            );
            dq.slice_mut(frame_rows(t, n)).assign(&gq);
            dk.slice_mut(frame_rows(t, m)).assign(&gk);
            dv.slice_mut(frame_rows(t, m)).assign(&gv);
        }
        geo.query_rope.rotate_transpose(&mut dq);
        geo.key_rope.rotate_transpose(&mut dk);

        self.key
            .accumulate_grads(&cache.embedded.view(), &dk.view(), &mut grad.key);
        self.value
            .accumulate_grads(&cache.embedded.view(), &dv.view(), &mut grad.value);
        let d_emb = self.key.input_grad(&dk.view()) + self.value.input_grad(&dv.view());
        self.embed
            .accumulate_grads(&cache.motion.view(), &d_emb.view(), &mut grad.embed);

        self.query
            .accumulate_grads(&cache.adjusted.view(), &dq.view(), &mut grad.query);
        let d_adj = self.query.input_grad(&dq.view());
        grad.norm_gamma += &(&d_adj * &cache.normed).sum_axis(Axis(0));
        grad.norm_beta += &d_adj.sum_axis(Axis(0));
        let d_norm = d_adj * &self.norm_gamma;
        layer_norm_backward(&cache.normed.view(), &cache.inv_std, &d_norm.view())
    }
}

fn zero_outside<S: Scalar>(m: &mut Array2<S>, inside: &[bool]) {
    for (mut row, keep) in m.axis_iter_mut(Axis(0)).zip(inside) {
        if !keep {
            row.fill(S::zero());
        }
    }
}

/// Motion residual for a `T x H x W x D` video token grid.
pub fn motion_cross_attention<S: Scalar>(
    queries: &Array4<S>,
    motion: &CanonicalMotionSequence<S>,
    track: &PlacementTrack<S>,
    cfg: &RopeConfig,
    weights: &MotionAttention<S>,
    opts: MotionOptions,
) -> Result<Array4<S>> {
    let (t, h, w, d) = queries.dim();
    if motion.frames() != t || track.len() != t {
        return Err(invalid(format!(
            "queries have {t} frames, motion {} and track {}",
            motion.frames(),
            track.len()
        )));
    }
    if cfg.head_dim != weights.head_dim() {
        return Err(invalid(format!(
            "rope head_dim {} differs from attention head_dim {}",
            cfg.head_dim,
            weights.head_dim()
        )));
    }
    if (h, w) != (track.grid.height, track.grid.width) {
        return Err(shape("query grid does not match the track grid"));
    }
    let (ch, cw) = motion.canonical_size();
    let geo = MotionGeometry::new(track, ch, cw, cfg)?;
    let x = queries
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((t * h * w, d))
        .map_err(|e| shape(e.to_string()))?;
    let tokens = motion.tokens();
    let (out, _) = weights.forward(&x.view(), &tokens.view(), &geo, opts)?;
    out.into_shape_with_order((t, h, w, d))
        .map_err(|e| shape(e.to_string()))
}
