use ndarray::{s, Array1, Array2, Array4, Axis};
use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::conditioning::{
    patchify, unpatchify, CanonicalMotionSequence, ContextSequence, MotionAttention, MotionCache,
    MotionGeometry, Segment,
};
use crate::error::{invalid, shape, Error, Result};
use crate::geometry::PlacementTrack;
use crate::nn::{
    adapted_backward, adapted_forward, gelu, gelu_grad, join, layer_norm, layer_norm_backward,
    multi_head_attention, multi_head_attention_backward, normal_matrix, AttentionCache, Linear,
    LowRankAdapter, ParamSet,
};
use crate::rope::RopeTable;
use crate::scalar::Scalar;

const TIME_SCALE: f64 = 1000.0;

/// Frozen weights of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseBlock<S> {
    pub q: Linear<S>,
    pub k: Linear<S>,
    pub v: Linear<S>,
    pub out: Linear<S>,
    pub ffn_in: Linear<S>,
    pub ffn_out: Linear<S>,
}

/// Frozen stem, blocks and head.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel<S> {
    pub latent_embed: Linear<S>,
    pub context_embed: Linear<S>,
    /// Rows: env, identity, memory.
    pub segment_embed: Array2<S>,
    pub time_embed: Linear<S>,
    pub blocks: Vec<BaseBlock<S>>,
    pub head: Linear<S>,
}

/// Low-rank adapters of one block, named after the layers they attach to.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAdapters<S> {
    pub to_q: LowRankAdapter<S>,
    pub to_k: LowRankAdapter<S>,
    pub to_v: LowRankAdapter<S>,
    pub to_out: LowRankAdapter<S>,
    pub ffn_in: LowRankAdapter<S>,
    pub ffn_out: LowRankAdapter<S>,
}

pub const ADAPTER_LAYERS: [&str; 6] = [
    "to_q",
    "to_k",
    "to_v",
    "to_out.0",
    "ffn.net.0.proj",
    "ffn.net.2",
];

impl<S: Scalar> BlockAdapters<S> {
    fn each(&self) -> [&LowRankAdapter<S>; 6] {
        [
            &self.to_q,
            &self.to_k,
            &self.to_v,
            &self.to_out,
            &self.ffn_in,
            &self.ffn_out,
        ]
    }

    fn each_mut(&mut self) -> [&mut LowRankAdapter<S>; 6] {
        [
            &mut self.to_q,
            &mut self.to_k,
            &mut self.to_v,
            &mut self.to_out,
            &mut self.ffn_in,
            &mut self.ffn_out,
        ]
    }

    fn zeros_like(&self) -> Self {
        let z =
            |a: &LowRankAdapter<S>| LowRankAdapter::zeros(a.down.ncols(), a.up.nrows(), a.rank());
        Self {
            to_q: z(&self.to_q),
            to_k: z(&self.to_k),
            to_v: z(&self.to_v),
            to_out: z(&self.to_out),
            ffn_in: z(&self.ffn_in),
            ffn_out: z(&self.ffn_out),
        }
    }
}

/// Parameter groups with separate learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Adapters,
    Motion,
}

/// Everything the optimizer touches.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable<S> {
    pub adapters: Vec<BlockAdapters<S>>,
    pub motion: Vec<MotionAttention<S>>,
}

impl<S: Scalar> Trainable<S> {
    pub fn zeros_like(&self) -> Self {
        Self {
            adapters: self
                .adapters
                .iter()
                .map(BlockAdapters::zeros_like)
                .collect(),
            motion: self
                .motion
                .iter()
                .map(MotionAttention::zeros_like)
                .collect(),
        }
    }

    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("motion.") {
            ParamGroup::Motion
        } else {
            ParamGroup::Adapters
        }
    }
}

impl<S: Scalar> ParamSet<S> for Trainable<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        for (b, ad) in self.adapters.iter().enumerate() {
            for (name, a) in ADAPTER_LAYERS.iter().zip(ad.each()) {
                a.visit(&join(prefix, &format!("adapters.{b}.{name}")), f);
            }
        }
        for (b, m) in self.motion.iter().enumerate() {
            m.visit(&join(prefix, &format!("motion.{b}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        for (b, ad) in self.adapters.iter_mut().enumerate() {
            for (name, a) in ADAPTER_LAYERS.iter().zip(ad.each_mut()) {
                a.visit_mut(&join(prefix, &format!("adapters.{b}.{name}")), f);
            }
        }
        for (b, m) in self.motion.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &format!("motion.{b}")), f);
        }
    }
}

impl<S: Scalar> ParamSet<S> for BaseModel<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        self.latent_embed.visit(&join(prefix, "latent_embed"), f);
        self.context_embed.visit(&join(prefix, "context_embed"), f);
        self.segment_embed.visit(&join(prefix, "segment_embed"), f);
        self.time_embed.visit(&join(prefix, "time_embed"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("blocks.{i}"));
            b.q.visit(&join(&p, "q"), f);
            b.k.visit(&join(&p, "k"), f);
            b.v.visit(&join(&p, "v"), f);
            b.out.visit(&join(&p, "out"), f);
            b.ffn_in.visit(&join(&p, "ffn_in"), f);
            b.ffn_out.visit(&join(&p, "ffn_out"), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        self.latent_embed
            .visit_mut(&join(prefix, "latent_embed"), f);
        self.context_embed
            .visit_mut(&join(prefix, "context_embed"), f);
        self.segment_embed
            .visit_mut(&join(prefix, "segment_embed"), f);
        self.time_embed.visit_mut(&join(prefix, "time_embed"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("blocks.{i}"));
            b.q.visit_mut(&join(&p, "q"), f);
            b.k.visit_mut(&join(&p, "k"), f);
            b.v.visit_mut(&join(&p, "v"), f);
            b.out.visit_mut(&join(&p, "out"), f);
            b.ffn_in.visit_mut(&join(&p, "ffn_in"), f);
            b.ffn_out.visit_mut(&join(&p, "ffn_out"), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Name, size and group of one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub len: usize,
    pub group: ParamGroup,
}

/// Motion maps and the placement track they are grounded with.
#[derive(Debug, Clone, Copy)]
pub struct MotionInput<'a, S> {
    pub sequence: &'a CanonicalMotionSequence<S>,
    pub track: &'a PlacementTrack<S>,
}

/// One sample for the velocity predictor.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a, S> {
    /// `T x (H p) x (W p) x C`
    pub z_t: &'a Array4<S>,
    pub t: S,
    pub context: &'a ContextSequence<S>,
    /// `None` disables the motion pathway.
    pub motion: Option<MotionInput<'a, S>>,
}

/// The velocity transformer: frozen base plus trainable adapters and motion
/// cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<S> {
    pub config: ModelConfig,
    pub base: BaseModel<S>,
    pub trainable: Trainable<S>,
}

struct BlockCache<S> {
    normed_attn: Array2<S>,
    inv_attn: Array1<S>,
    ax: [Option<Array2<S>>; 6],
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    attn: AttentionCache<S>,
    attended: Array2<S>,
    motion: Option<MotionCache<S>>,
    normed_ffn: Array2<S>,
    inv_ffn: Array1<S>,
    pre_act: Array2<S>,
    act: Array2<S>,
}

/// Activations kept for [`ToyModel::backward`].
pub struct ForwardCache<S> {
    blocks: Vec<BlockCache<S>>,
    rope: RopeTable<S>,
    geometry: Option<MotionGeometry<S>>,
    video_rows: usize,
    total_rows: usize,
    normed_out: Array2<S>,
    inv_out: Array1<S>,
    grid: (usize, usize, usize),
    conditioned: bool,
}

fn segment_index(s: Segment) -> usize {
    match s {
        Segment::Env => 0,
        Segment::Identity => 1,
        Segment::Memory => 2,
    }
}

/// `[sin(t w_i), cos(t w_i)]` with `w_i = 10000^(-i / (d/2))`, `t` scaled by 1000.
pub fn timestep_features<S: Scalar>(t: S, dim: usize) -> Array1<S> {
    let half = dim / 2;
    let x = t.as_f64() * TIME_SCALE;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let w = 10_000f64.powf(-(i as f64) / half as f64);
        out[i] = S::lit((x * w).sin());
        out[half + i] = S::lit((x * w).cos());
    }
    out
}

fn check_finite<S: Scalar>(m: &Array2<S>, stage: &'static str, index: usize) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage, index });
    }
    Ok(())
}

impl<S: Scalar> ToyModel<S> {
    /// Random frozen base, adapters with `B = 0` and motion output
    /// projections at zero.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let pd = config.patch_dim();
        let hidden = config.hidden();
        let base = BaseModel {
            latent_embed: Linear::random(rng, pd, d),
            context_embed: Linear::random(rng, pd + 1, d),
            segment_embed: normal_matrix(rng, 3, d, 1.0),
            time_embed: Linear::random(rng, d, d),
            blocks: (0..config.blocks)
                .map(|_| BaseBlock {
                    q: Linear::random(rng, d, d),
                    k: Linear::random(rng, d, d),
                    v: Linear::random(rng, d, d),
                    out: Linear::random(rng, d, d),
                    ffn_in: Linear::random(rng, d, hidden),
                    ffn_out: Linear::random(rng, hidden, d),
                })
                .collect(),
            head: Linear::random(rng, d, pd),
        };
        let r = config.rank;
        let adapters = (0..config.blocks)
            .map(|_| BlockAdapters {
                to_q: LowRankAdapter::new(rng, d, d, r),
                to_k: LowRankAdapter::new(rng, d, d, r),
                to_v: LowRankAdapter::new(rng, d, d, r),
                to_out: LowRankAdapter::new(rng, d, d, r),
                ffn_in: LowRankAdapter::new(rng, d, hidden, r),
                ffn_out: LowRankAdapter::new(rng, hidden, d, r),
            })
            .collect();
        let motion = (0..config.blocks)
            .map(|_| MotionAttention::new(rng, d, config.motion_channels, config.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            base,
            trainable: Trainable { adapters, motion },
        })
    }

    pub fn trainable_parameters(&self) -> Vec<NamedParam> {
        let mut out = Vec::new();
        self.trainable.visit("", &mut |name, p| {
            out.push(NamedParam {
                group: Trainable::<S>::group_of(&name),
                name,
                len: p.len(),
            })
        });
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.param_count()
    }

    /// SHA-256 over every frozen weight, in visiting order.
    pub fn base_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        self.base.visit("", &mut |name, p| {
            h.update(name.as_bytes());
            buf.clear();
            for v in p {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        });
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, input: &ModelInput<S>) -> Result<(usize, usize, usize)> {
        let c = &self.config;
        let (t, hp, wp, ch) = input.z_t.dim();
        if ch != c.latent_channels || hp % c.patch != 0 || wp % c.patch != 0 || t == 0 {
            return Err(shape(format!(
                "latent {:?} does not fit patch {} with {} channels",
                input.z_t.dim(),
                c.patch,
                c.latent_channels
            )));
        }
        let (h, w) = (hp / c.patch, wp / c.patch);
        let (l, ch_, cw_, cc) = input.context.tokens.dim();
        if (ch_, cw_) != (h, w) || cc != c.patch_dim() + 1 || l != input.context.labels.len() {
            return Err(shape(format!(
                "context {:?} does not match a {h}x{w} grid with {} channels",
                input.context.tokens.dim(),
                c.patch_dim() + 1
            )));
        }
        let envs = input
            .context
            .labels
            .iter()
            .take_while(|s| **s == Segment::Env)
            .count();
        if envs != t || input.context.labels[t..].contains(&Segment::Env) {
            return Err(invalid(format!(
                "context must start with exactly {t} env frames"
            )));
        }
        if let Some(g) = &input.context.global_token {
            if g.len() != c.dim {
                return Err(shape(format!(
                    "global token has {} entries, model width is {}",
                    g.len(),
                    c.dim
                )));
            }
        }
        if !(input.t >= S::zero() && input.t <= S::one()) {
            return Err(invalid(format!("timestep {} outside [0, 1]", input.t)));
        }
        if let Some(m) = &input.motion {
            if m.sequence.frames() != t || m.track.len() != t {
                return Err(invalid(format!(
                    "motion has {} frames and track {}, latent has {t}",
                    m.sequence.frames(),
                    m.track.len()
                )));
            }
            if m.sequence.canonical_size() != (c.canonical_h, c.canonical_w)
                || m.sequence.channels() != c.motion_channels
            {
                return Err(shape(
                    "motion maps do not match the model's canonical size or channels",
                ));
            }
            if (m.track.grid.height, m.track.grid.width) != (h, w) {
                return Err(shape("track grid does not match the latent grid"));
            }
        }
        Ok((t, h, w))
    }

    fn embed(
        &self,
        input: &ModelInput<S>,
        t: usize,
        h: usize,
        w: usize,
    ) -> Result<(Array2<S>, Vec<[f64; 3]>)> {
        let c = &self.config;
        let n = h * w;
        let ctx = &input.context;
        let l = ctx.len();
        let global = ctx.global_token.is_some() as usize;
        let rows = l * n + global;
        let ctx_rows = ctx
            .tokens
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((l * n, c.patch_dim() + 1))
            .map_err(|e| shape(e.to_string()))?;
        let mut x = Array2::zeros((rows, c.dim));
        x.slice_mut(s![..l * n, ..])
            .assign(&self.base.context_embed.forward(&ctx_rows.view()));
        let z = patchify(&input.z_t.view(), c.patch)?
            .into_shape_with_order((t * n, c.patch_dim()))
            .map_err(|e| shape(e.to_string()))?;
        let zemb = self.base.latent_embed.forward(&z.view());
        x.slice_mut(s![..t * n, ..]).scaled_add(S::one(), &zemb);
        let temb = self
            .base
            .time_embed
            .forward(
                &timestep_features(input.t, c.dim)
                    .insert_axis(Axis(0))
                    .view(),
            )
            .remove_axis(Axis(0));
        let mut positions = Vec::with_capacity(rows);
        for (f, label) in ctx.labels.iter().enumerate() {
            let seg = self.base.segment_embed.row(segment_index(*label));
            for y in 0..h {
                for xx in 0..w {
                    let mut row = x.row_mut(f * n + y * w + xx);
                    row += &seg;
                    row += &temb;
                    positions.push([f as f64, xx as f64, y as f64]);
                }
            }
        }
        if let Some(g) = &ctx.global_token {
            let mut row = x.row_mut(l * n);
            row += g;
            row += &temb;
            positions.push([0.0; 3]);
        }
        Ok((x, positions))
    }

    /// Predicted velocity plus the activations needed for backward.
    pub fn forward(&self, input: &ModelInput<S>) -> Result<(Array4<S>, ForwardCache<S>)> {
        self.run(input, true)
    }

    /// The frozen base alone: no adapters, no motion pathway.
    pub fn forward_base(&self, input: &ModelInput<S>) -> Result<Array4<S>> {
        self.run(input, false).map(|(v, _)| v)
    }

    pub fn predict(&self, input: &ModelInput<S>) -> Result<Array4<S>> {
        self.forward(input).map(|(v, _)| v)
    }

    /// Independent predictions for each sample of a batch.
    pub fn predict_batch(&self, inputs: &[ModelInput<S>]) -> Result<Vec<Array4<S>>> {
        inputs.iter().map(|i| self.predict(i)).collect()
    }

    fn run(
        &self,
        input: &ModelInput<S>,
        conditioned: bool,
    ) -> Result<(Array4<S>, ForwardCache<S>)> {
        let c = &self.config;
        let (t, h, w) = self.check_input(input)?;
        let n = h * w;
        let (mut x, positions) = self.embed(input, t, h, w)?;
        let rope = RopeTable::new(&positions, &c.rope);
        let video_rows = t * n;
        let motion = match (conditioned, &input.motion) {
            (true, Some(m)) => Some((
                m.sequence.tokens(),
                MotionGeometry::new(m.track, c.canonical_h, c.canonical_w, &c.rope)?,
            )),
            _ => None,
        };
        let mut caches = Vec::with_capacity(c.blocks);
        for b in 0..c.blocks {
            let base = &self.base.blocks[b];
            let ad = conditioned.then(|| &self.trainable.adapters[b]);
            let (normed_attn, inv_attn) = layer_norm(&x.view());
            let (mut q, ax_q) = adapted_forward(&normed_attn.view(), &base.q, ad.map(|a| &a.to_q));
            let (mut k, ax_k) = adapted_forward(&normed_attn.view(), &base.k, ad.map(|a| &a.to_k));
            let (v, ax_v) = adapted_forward(&normed_attn.view(), &base.v, ad.map(|a| &a.to_v));
            rope.rotate(&mut q);
            rope.rotate(&mut k);
            let (attended, attn) =
                multi_head_attention(&q.view(), &k.view(), &v.view(), c.heads, None);
            let (y, ax_o) = adapted_forward(&attended.view(), &base.out, ad.map(|a| &a.to_out));
            x += &y;
            let motion_cache = match &motion {
                Some((tokens, geo)) => {
                    let (r, mc) = self.trainable.motion[b].forward(
                        &x.slice(s![..video_rows, ..]),
                        &tokens.view(),
                        geo,
                        c.motion,
                    )?;
                    x.slice_mut(s![..video_rows, ..]).scaled_add(S::one(), &r);
                    Some(mc)
                }
                None => None,
            };
            let (normed_ffn, inv_ffn) = layer_norm(&x.view());
            let (pre_act, ax_1) =
                adapted_forward(&normed_ffn.view(), &base.ffn_in, ad.map(|a| &a.ffn_in));
            let act = pre_act.mapv(gelu);
            let (f2, ax_2) = adapted_forward(&act.view(), &base.ffn_out, ad.map(|a| &a.ffn_out));
            x += &f2;
            check_finite(&x, "transformer block", b)?;
            caches.push(BlockCache {
                normed_attn,
                inv_attn,
                ax: [ax_q, ax_k, ax_v, ax_o, ax_1, ax_2],
                q,
                k,
                v,
                attn,
                attended,
                motion: motion_cache,
                normed_ffn,
                inv_ffn,
                pre_act,
                act,
            });
        }
        let (normed_out, inv_out) = layer_norm(&x.slice(s![..video_rows, ..]));
        let out = self.base.head.forward(&normed_out.view());
        let out4 = out
            .into_shape_with_order((t, h, w, c.patch_dim()))
            .map_err(|e| shape(e.to_string()))?;
        let v = unpatchify(&out4.view(), c.patch, c.latent_channels)?;
        Ok((
            v,
            ForwardCache {
                blocks: caches,
                rope,
                geometry: motion.map(|(_, g)| g),
                video_rows,
                total_rows: x.nrows(),
                normed_out,
                inv_out,
                grid: (t, h, w),
                conditioned,
            },
        ))
    }

    /// Gradients of a scalar loss with respect to the trainable parameters,
    /// given its gradient with respect to the predicted velocity.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        d_velocity: &Array4<S>,
    ) -> Result<Trainable<S>> {
        if !cache.conditioned {
            return Err(invalid(
                "cannot backpropagate through a base-only forward pass",
            ));
        }
        let c = &self.config;
        let (t, h, w) = cache.grid;
        let d_tok = patchify(&d_velocity.view(), c.patch)?
            .into_shape_with_order((t * h * w, c.patch_dim()))
            .map_err(|e| shape(e.to_string()))?;
        let d_norm = self.base.head.input_grad(&d_tok.view());
        let mut dx = Array2::zeros((cache.total_rows, c.dim));
        dx.slice_mut(s![..cache.video_rows, ..])
            .assign(&layer_norm_backward(
                &cache.normed_out.view(),
                &cache.inv_out,
                &d_norm.view(),
            ));

        let mut grad = self.trainable.zeros_like();
        for b in (0..c.blocks).rev() {
            let bc = &cache.blocks[b];
            let base = &self.base.blocks[b];
            let ad = &self.trainable.adapters[b];
            let g = &mut grad.adapters[b];
            let ax = |i: usize| bc.ax[i].as_ref();

            let d_act = adapted_backward(
                &bc.act.view(),
                ax(5),
                &dx.view(),
                &base.ffn_out,
                Some(&ad.ffn_out),
                Some(&mut g.ffn_out),
            );
            let mut d_pre = d_act;
            ndarray::Zip::from(&mut d_pre)
                .and(&bc.pre_act)
                .for_each(|d, p| *d *= gelu_grad(*p));
            let d_nf = adapted_backward(
                &bc.normed_ffn.view(),
                ax(4),
                &d_pre.view(),
                &base.ffn_in,
                Some(&ad.ffn_in),
                Some(&mut g.ffn_in),
            );
            dx += &layer_norm_backward(&bc.normed_ffn.view(), &bc.inv_ffn, &d_nf.view());

            if let (Some(mc), Some(geo)) = (&bc.motion, &cache.geometry) {
                let d_video = self.trainable.motion[b].backward(
                    mc,
                    geo,
                    &dx.slice(s![..cache.video_rows, ..]),
                    &mut grad.motion[b],
                );
                dx.slice_mut(s![..cache.video_rows, ..])
                    .scaled_add(S::one(), &d_video);
            }

            let d_att = adapted_backward(
                &bc.attended.view(),
                ax(3),
                &dx.view(),
                &base.out,
                Some(&ad.to_out),
                Some(&mut g.to_out),
            );
            let (mut dq, mut dk, dv) = multi_head_attention_backward(
                &bc.q.view(),
                &bc.k.view(),
                &bc.v.view(),
                &bc.attn,
                &d_att.view(),
            );
            cache.rope.rotate_transpose(&mut dq);
            cache.rope.rotate_transpose(&mut dk);
            let na = bc.normed_attn.view();
            let mut d_na = adapted_backward(
                &na,
                ax(0),
                &dq.view(),
                &base.q,
                Some(&ad.to_q),
                Some(&mut g.to_q),
            );
            d_na += &adapted_backward(
                &na,
                ax(1),
                &dk.view(),
                &base.k,
                Some(&ad.to_k),
                Some(&mut g.to_k),
            );
            d_na += &adapted_backward(
                &na,
                ax(2),
                &dv.view(),
                &base.v,
                Some(&ad.to_v),
                Some(&mut g.to_v),
            );
            dx += &layer_norm_backward(&na, &bc.inv_attn, &d_na.view());
        }
        Ok(grad)
    }
}
