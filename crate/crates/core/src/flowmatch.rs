//! Rectified-flow objective, masked targets, timestep and mode sampling,
//! and Euler integration of a learned velocity field.

use ndarray::{Array3, Array4, ArrayView3, ArrayView4, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_SAMPLING_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentRole {
    Clean,
    Noise,
    Interpolant,
    Preserved,
}

/// A `T x H x W x C` latent tensor tagged with what it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo<S> {
    pub data: Array4<S>,
    pub role: LatentRole,
}

impl<S: Scalar> LatentVideo<S> {
    pub fn new(data: Array4<S>, role: LatentRole) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "latent",
                index: i,
            });
        }
        Ok(Self { data, role })
    }
}

fn same_shape<S>(a: &ArrayView4<S>, b: &ArrayView4<S>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `z_t = t z1 + (1 - t) z0`
pub fn interpolate<S: Scalar>(z0: &ArrayView4<S>, z1: &ArrayView4<S>, t: S) -> Result<Array4<S>> {
    same_shape(z0, z1, "interpolate")?;
    if !(t >= S::zero() && t <= S::one()) {
        return Err(invalid(format!("interpolation time {t} is outside [0, 1]")));
    }
    let mut out = Array4::zeros(z0.raw_dim());
    Zip::from(&mut out)
        .and(z0)
        .and(z1)
        .for_each(|o, a, b| *o = t * *b + (S::one() - t) * *a);
    Ok(out)
}

/// `v = z1 - z0`
pub fn velocity_target<S: Scalar>(z0: &ArrayView4<S>, z1: &ArrayView4<S>) -> Result<Array4<S>> {
    same_shape(z0, z1, "velocity target")?;
    Ok(z1 - z0)
}

fn check_mask<S: Scalar>(z: &ArrayView4<S>, mask: &ArrayView3<S>) -> Result<()> {
    let (t, h, w, _) = z.dim();
    if mask.dim() != (t, h, w) {
        return Err(shape(format!(
            "mask {:?} does not cover latent {:?}",
            mask.dim(),
            z.dim()
        )));
    }
    if mask.iter().any(|m| *m != S::zero() && *m != S::one()) {
        return Err(invalid("mask values must be 0 or 1"));
    }
    Ok(())
}

/// `mask * z0 + (1 - mask) * z_keep`, the mask shared across channels.
pub fn masked_target<S: Scalar>(
    z0: &ArrayView4<S>,
    z_keep: &ArrayView4<S>,
    mask: &ArrayView3<S>,
) -> Result<Array4<S>> {
    same_shape(z0, z_keep, "masked target")?;
    check_mask(z0, mask)?;
    let mut out = z0.to_owned();
    for ((mut o, k), m) in out
        .lanes_mut(Axis(3))
        .into_iter()
        .zip(z_keep.lanes(Axis(3)))
        .zip(mask.iter())
    {
        if *m == S::zero() {
            o.assign(&k);
        }
    }
    Ok(out)
}

/// Where the regression residual counts.
#[derive(Debug, Clone, PartialEq)]
pub enum LossRegion<S> {
    All,
    /// Residual zeroed wherever the `T x H x W` mask is 0. The mean is
    /// still taken over every element.
    Within(Array3<S>),
}

/// Mean squared error between `pred` and `z1 - z_tgt`, with its gradient
/// with respect to `pred`.
pub fn fm_loss_and_grad<S: Scalar>(
    pred: &ArrayView4<S>,
    z_tgt: &ArrayView4<S>,
    z1: &ArrayView4<S>,
    region: &LossRegion<S>,
) -> Result<(S, Array4<S>)> {
    same_shape(pred, z_tgt, "loss")?;
    same_shape(pred, z1, "loss")?;
    let mut resid = Array4::zeros(pred.raw_dim());
    Zip::from(&mut resid)
        .and(pred)
        .and(z_tgt)
        .and(z1)
        .for_each(|r, p, z0, z1| *r = *p - (*z1 - *z0));
    if let LossRegion::Within(mask) = region {
        check_mask(pred, &mask.view())?;
        for (mut lane, m) in resid.lanes_mut(Axis(3)).into_iter().zip(mask.iter()) {
            if *m == S::zero() {
                lane.fill(S::zero());
            }
        }
    }
    let n = S::lit(resid.len() as f64);
    let loss = resid.iter().map(|r| *r * *r).sum::<S>() / n;
    let scale = S::lit(2.0) / n;
    resid.mapv_inplace(|r| r * scale);
    Ok((loss, resid))
}

/// `mean((pred - (z1 - z_tgt))^2)` over every element.
pub fn fm_loss<S: Scalar>(
    pred: &ArrayView4<S>,
    z_tgt: &ArrayView4<S>,
    z1: &ArrayView4<S>,
) -> Result<S> {
    fm_loss_and_grad(pred, z_tgt, z1, &LossRegion::All).map(|(l, _)| l)
}

/// Logit-normal distribution over `(0, 1)`: `sigmoid(mu + sigma n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LogitNormal {
    fn default() -> Self {
        Self {
            mu: 0.0,
            sigma: 1.0,
        }
    }
}

impl LogitNormal {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(invalid(format!(
                "bad logit-normal parameters mu={} sigma={}",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let n: f64 = StandardNormal.sample(rng);
        let t = 1.0 / (1.0 + (-(self.mu + self.sigma * n)).exp());
        // keep the open interval even for extreme draws
        t.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }
}

/// Seeded logit-normal timestep source.
#[derive(Debug, Clone)]
pub struct TimestepSampler {
    pub distribution: LogitNormal,
    rng: ChaCha8Rng,
}

impl TimestepSampler {
    pub fn new(distribution: LogitNormal, seed: u64) -> Result<Self> {
        distribution.validate()?;
        Ok(Self {
            distribution,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

pub fn sample_timestep(sampler: &mut TimestepSampler) -> f64 {
    sampler.distribution.sample(&mut sampler.rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    SceneOnly,
    MotionOnly,
    Full,
}

impl ModeKind {
    pub fn name(self) -> &'static str {
        match self {
            ModeKind::SceneOnly => "scene_only",
            ModeKind::MotionOnly => "motion_only",
            ModeKind::Full => "full",
        }
    }

    pub fn uses_motion(self) -> bool {
        self != ModeKind::SceneOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMode {
    pub kind: ModeKind,
    /// Leading frames given as clean history; 0 when disabled.
    pub history_frames: usize,
}

/// Mixing probabilities for the three training modes and the history draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    pub scene_only: f64,
    pub motion_only: f64,
    pub full: f64,
    pub history_prob: f64,
    pub history_min: usize,
    pub history_max: usize,
}

impl Default for ModeSchedule {
    fn default() -> Self {
        Self {
            scene_only: 0.10,
            motion_only: 0.25,
            full: 0.65,
            history_prob: 0.5,
            history_min: 1,
            history_max: 9,
        }
    }
}

impl ModeSchedule {
    pub fn validate(&self) -> Result<()> {
        let p = [
            self.scene_only,
            self.motion_only,
            self.full,
            self.history_prob,
        ];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("schedule probabilities must lie in [0, 1]"));
        }
        let sum = self.scene_only + self.motion_only + self.full;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mode probabilities sum to {sum}, not 1")));
        }
        if self.history_min == 0 || self.history_min > self.history_max {
            return Err(invalid(format!(
                "history length range {}..={} is empty or includes 0",
                self.history_min, self.history_max
            )));
        }
        Ok(())
    }
}

/// Draws the mode, then independently whether and how much history to use.
pub fn pick_training_mode<R: Rng>(rng: &mut R, schedule: &ModeSchedule) -> Result<TrainingMode> {
    schedule.validate()?;
    let u: f64 = rng.random();
    let kind = if u < schedule.scene_only {
        ModeKind::SceneOnly
    } else if u < schedule.scene_only + schedule.motion_only {
        ModeKind::MotionOnly
    } else {
        ModeKind::Full
    };
    let history_frames = if rng.random_bool(schedule.history_prob) {
        rng.random_range(schedule.history_min..=schedule.history_max)
    } else {
        0
    };
    Ok(TrainingMode {
        kind,
        history_frames,
    })
}

/// Integrates `dz/dt = v(z, t)` from `t = 1` down to `t = 0` with uniform
/// Euler steps.
pub fn euler_sample<S, F>(mut velocity: F, z1: &ArrayView4<S>, steps: usize) -> Result<Array4<S>>
where
    S: Scalar,
    F: FnMut(&Array4<S>, S) -> Result<Array4<S>>,
{
    if steps == 0 {
        return Err(invalid("euler sampling needs at least one step"));
    }
    let dt = S::one() / S::lit(steps as f64);
    let mut z = z1.to_owned();
    for i in 0..steps {
        let t = S::one() - S::lit(i as f64) * dt;
        let v = velocity(&z, t)?;
        if v.dim() != z.dim() {
            return Err(shape(format!(
                "velocity {:?} vs state {:?}",
                v.dim(),
                z.dim()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                stage: "euler step",
                index: i,
            });
        }
        z.scaled_add(-dt, &v);
    }
    Ok(z)
}
