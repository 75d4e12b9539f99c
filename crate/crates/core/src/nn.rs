//! Dense building blocks with hand-written backward passes.
//!
//! Every forward here has a matching gradient routine; the model composes
//! them directly instead of going through a general autodiff tape.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Fills a matrix with `N(0, std^2)` samples drawn in row-major order.
pub fn normal_matrix<S: Scalar, R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<S> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || S::lit(dist.sample(rng)))
}

/// Named access to a fixed, ordered list of parameter tensors. Gradient
/// structs share the layout of their parameter structs, so visiting both
/// yields matching sequences.
pub trait ParamSet<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn slice_of<S, D: ndarray::Dimension>(a: &ndarray::Array<S, D>) -> &[S] {
    a.as_slice().expect("parameters are contiguous")
}

fn slice_of_mut<S, D: ndarray::Dimension>(a: &mut ndarray::Array<S, D>) -> &mut [S] {
    a.as_slice_mut().expect("parameters are contiguous")
}

/// `y = x W^T + b` with `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Weights drawn from `N(0, 1/in)`, zero bias.
    pub fn random<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self {
            weight: normal_matrix(rng, output, input, 1.0 / (input as f64).sqrt()),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<S>) -> Array2<S> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    pub fn input_grad(&self, dy: &ArrayView2<S>) -> Array2<S> {
        dy.dot(&self.weight)
    }

    /// Accumulates `dW += dy^T x` and `db += sum(dy)`.
    pub fn accumulate_grads(&self, x: &ArrayView2<S>, dy: &ArrayView2<S>, grad: &mut Linear<S>) {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
    }
}

/// Low-rank update `B (A x)` attached to a frozen linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankAdapter<S> {
    /// `A: r x in`
    pub down: Array2<S>,
    /// `B: out x r`
    pub up: Array2<S>,
}

impl<S: Scalar> LowRankAdapter<S> {
    /// Standard initialization: `A ~ N(0, 1/in)`, `B = 0`.
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize, rank: usize) -> Self {
        Self {
            down: normal_matrix(rng, rank, input, 1.0 / (input as f64).sqrt()),
            up: Array2::zeros((output, rank)),
        }
    }

    pub fn zeros(input: usize, output: usize, rank: usize) -> Self {
        Self {
            down: Array2::zeros((rank, input)),
            up: Array2::zeros((output, rank)),
        }
    }

    pub fn rank(&self) -> usize {
        self.down.nrows()
    }

    /// Dense `B A`, `out x in`.
    pub fn delta(&self) -> Array2<S> {
        self.up.dot(&self.down)
    }
}

impl<S: Scalar> ParamSet<S> for Linear<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        f(join(prefix, "weight"), slice_of(&self.weight));
        f(join(prefix, "bias"), slice_of(&self.bias));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        f(join(prefix, "weight"), slice_of_mut(&mut self.weight));
        f(join(prefix, "bias"), slice_of_mut(&mut self.bias));
    }
}

impl<S: Scalar> ParamSet<S> for LowRankAdapter<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        f(join(prefix, "down"), slice_of(&self.down));
        f(join(prefix, "up"), slice_of(&self.up));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        f(join(prefix, "down"), slice_of_mut(&mut self.down));
        f(join(prefix, "up"), slice_of_mut(&mut self.up));
    }
}

impl<S: Scalar> ParamSet<S> for Array1<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        f(prefix.to_string(), slice_of(self));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        f(prefix.to_string(), slice_of_mut(self));
    }
}

impl<S: Scalar> ParamSet<S> for Array2<S> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[S])) {
        f(prefix.to_string(), slice_of(self));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [S])) {
        f(prefix.to_string(), slice_of_mut(self));
    }
}

/// `y = W x + B (A x)` for a batch of row vectors.
pub fn apply_adapter<S: Scalar>(
    x: &ArrayView2<S>,
    base: &Linear<S>,
    adapter: &LowRankAdapter<S>,
) -> Result<Array2<S>> {
    if adapter.down.ncols() != base.input_dim()
        || adapter.up.nrows() != base.output_dim()
        || adapter.up.ncols() != adapter.down.nrows()
    {
        return Err(shape(format!(
            "adapter {}x{} / {}x{} does not fit a {}x{} layer",
            adapter.up.nrows(),
            adapter.up.ncols(),
            adapter.down.nrows(),
            adapter.down.ncols(),
            base.output_dim(),
            base.input_dim()
        )));
    }
    if x.ncols() != base.input_dim() {
        return Err(shape(format!(
            "input has {} features, layer expects {}",
            x.ncols(),
            base.input_dim()
        )));
    }
    let (y, _) = adapted_forward(x, base, Some(adapter));
    Ok(y)
}

/// Forward of an optionally adapted layer; also returns `A x` for backward.
pub(crate) fn adapted_forward<S: Scalar>(
    x: &ArrayView2<S>,
    base: &Linear<S>,
    adapter: Option<&LowRankAdapter<S>>,
) -> (Array2<S>, Option<Array2<S>>) {
    let mut y = base.forward(x);
    match adapter {
        Some(ad) => {
            let ax = x.dot(&ad.down.t());
            y += &ax.dot(&ad.up.t());
            (y, Some(ax))
        }
        None => (y, None),
    }
}

/// Backward of [`adapted_forward`]: accumulates adapter grads and returns `dx`.
pub(crate) fn adapted_backward<S: Scalar>(
    x: &ArrayView2<S>,
    ax: Option<&Array2<S>>,
    dy: &ArrayView2<S>,
    base: &Linear<S>,
    adapter: Option<&LowRankAdapter<S>>,
    grad: Option<&mut LowRankAdapter<S>>,
) -> Array2<S> {
    let mut dx = base.input_grad(dy);
    if let (Some(ad), Some(ax)) = (adapter, ax) {
        let d_ax = dy.dot(&ad.up);
        if let Some(g) = grad {
            g.up += &dy.t().dot(ax);
            g.down += &d_ax.t().dot(x);
        }
        dx += &d_ax.dot(&ad.down);
    }
    dx
}

/// Row-wise normalization to zero mean / unit variance. Returns the
/// normalized rows and `1/std` per row.
pub fn layer_norm<S: Scalar>(x: &ArrayView2<S>) -> (Array2<S>, Array1<S>) {
    let d = S::lit(x.ncols() as f64);
    let eps = S::lit(LAYER_NORM_EPS);
    let mut y = x.to_owned();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, inv_std) in y.axis_iter_mut(Axis(0)).zip(inv.iter_mut()) {
        let mean = row.iter().copied().sum::<S>() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| *v * *v).sum::<S>() / d;
        let r = S::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * r);
        *inv_std = r;
    }
    (y, inv)
}

/// Gradient of [`layer_norm`] given its output `y` and `1/std`.
pub fn layer_norm_backward<S: Scalar>(
    y: &ArrayView2<S>,
    inv_std: &Array1<S>,
    dy: &ArrayView2<S>,
) -> Array2<S> {
    let d = S::lit(y.ncols() as f64);
    let mut dx = Array2::zeros(y.raw_dim());
    for (((mut out, yr), gr), r) in dx
        .axis_iter_mut(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .zip(dy.axis_iter(Axis(0)))
        .zip(inv_std.iter())
    {
        let mean_g = gr.iter().copied().sum::<S>() / d;
        let mean_gy = gr.iter().zip(yr.iter()).map(|(g, y)| *g * *y).sum::<S>() / d;
        Zip::from(&mut out)
            .and(&yr)
            .and(&gr)
            .for_each(|o, yv, gv| *o = *r * (*gv - mean_g - *yv * mean_gy));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::lit(GELU_C);
    let k = S::lit(GELU_K);
    let half = S::lit(0.5);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::lit(GELU_C);
    let k = S::lit(GELU_K);
    let half = S::lit(0.5);
    let inner = c * (x + k * x * x * x);
    let th = inner.tanh();
    let sech2 = S::one() - th * th;
    half * (S::one() + th) + half * x * sech2 * c * (S::one() + S::lit(3.0) * k * x * x)
}

/// In-place numerically stable softmax over each row.
pub fn softmax_rows<S: Scalar>(m: &mut Array2<S>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().copied().sum::<S>();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Per-head attention probabilities kept for backward.
#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    pub probs: Vec<Array2<S>>,
}

/// Multi-head scaled dot-product attention on already-rotated inputs.
/// `q: Lq x (H*d)`, `k, v: Lk x (H*d)`; returns `Lq x (H*d)`.
pub fn multi_head_attention<S: Scalar>(
    q: &ArrayView2<S>,
    k: &ArrayView2<S>,
    v: &ArrayView2<S>,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> (Array2<S>, AttentionCache<S>) {
    let dh = q.ncols() / heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), q.ncols()));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        p.mapv_inplace(|x| x * scale);
        if let Some(mask) = key_mask {
            for mut row in p.axis_iter_mut(Axis(0)) {
                for (x, keep) in row.iter_mut().zip(mask) {
                    if !keep {
                        *x = S::neg_infinity();
                    }
                }
            }
        }
        softmax_rows(&mut p);
        out.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (out, AttentionCache { probs })
}

/// Backward of [`multi_head_attention`]: returns `(dq, dk, dv)` with respect
/// to the rotated inputs.
pub fn multi_head_attention_backward<S: Scalar>(
    q: &ArrayView2<S>,
    k: &ArrayView2<S>,
    v: &ArrayView2<S>,
    cache: &AttentionCache<S>,
    d_out: &ArrayView2<S>,
) -> (Array2<S>, Array2<S>, Array2<S>) {
    let heads = cache.probs.len();
    let dh = q.ncols() / heads;
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, p) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout_h = d_out.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&dout_h));
        let mut ds = dout_h.dot(&v.slice(cols).t());
        for (mut row, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
            let dot = row.iter().zip(prow.iter()).map(|(a, b)| *a * *b).sum::<S>();
            Zip::from(&mut row)
                .and(&prow)
                .for_each(|g, pv| *g = *pv * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}
