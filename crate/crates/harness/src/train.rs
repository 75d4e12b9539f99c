//! Masked rectified-flow training over the synthetic dataset.

use std::fmt;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenecomp_core::flowmatch::{
    fm_loss_and_grad, interpolate, pick_training_mode, ModeKind, TrainingMode,
};
use scenecomp_core::nn::ParamSet;
use scenecomp_core::toymodel::{Adam, Checkpoint, ToyModel, TrainState, Trainable};

use crate::conditions::{noise_like, training_sample, TrainSample};
use crate::config::RunConfig;
use crate::dataset::Dataset;

/// Checkpoint entry holding the run config text.
pub const RUN_CONFIG_ENTRY: &str = "run.config";

/// One training step's record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub modes: Vec<TrainingMode>,
    pub loss: f64,
}

pub fn mode_tag(m: &TrainingMode) -> String {
    if m.history_frames > 0 {
        format!("{}+h{}", m.kind.name(), m.history_frames)
    } else {
        m.kind.name().to_string()
    }
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<String> = self.modes.iter().map(mode_tag).collect();
        write!(
            f,
            "step={} mode={} loss={:.6}",
            self.step,
            tags.join(","),
            self.loss
        )
    }
}

/// Fresh model and optimizer; the model seed fixes the frozen base.
pub fn init_state(cfg: &RunConfig) -> Result<TrainState<f32>> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.model.seed);
    let model = ToyModel::<f32>::new(cfg.model_config()?, &mut init_rng)?;
    let optimizer = Adam::new(cfg.adam(), &model.trainable)?;
    Ok(TrainState {
        model,
        optimizer,
        rng: ChaCha8Rng::seed_from_u64(cfg.train.seed),
        step: 0,
    })
}

fn accumulate(acc: &mut Trainable<f32>, g: &Trainable<f32>, scale: f32) {
    let mut vals = Vec::new();
    g.visit("", &mut |_, p| vals.push(p.to_vec()));
    let mut i = 0;
    acc.visit_mut("", &mut |_, p| {
        for (a, b) in p.iter_mut().zip(&vals[i]) {
            *a += scale * *b;
        }
        i += 1;
    });
}

/// Draws clip, mode, augmentation, memory, timestep and noise for one
/// sample, in that order, from the training rng.
pub fn draw_sample(
    state: &mut TrainState<f32>,
    data: &Dataset,
    cfg: &RunConfig,
) -> Result<(TrainSample, f32, ndarray::Array4<f32>)> {
    let rng = &mut state.rng;
    let clip = &data.train[rng.random_range(0..data.train.len())];
    let mode = pick_training_mode(rng, &cfg.schedule())?;
    let sample = training_sample(clip, mode, cfg, rng)?;
    let t = cfg.timesteps().sample(rng) as f32;
    let z1 = noise_like(sample.target.dim(), rng);
    Ok((sample, t, z1))
}

/// Loss and trainable gradients of one sample.
pub fn sample_loss(
    model: &ToyModel<f32>,
    sample: &TrainSample,
    t: f32,
    z1: &ndarray::Array4<f32>,
) -> Result<(f32, Trainable<f32>)> {
    let z_t = interpolate(&sample.target.view(), &z1.view(), t)?;
    let (pred, cache) = model.forward(&sample.cond.input(&z_t, t))?;
    let (loss, grad) = fm_loss_and_grad(
        &pred.view(),
        &sample.target.view(),
        &z1.view(),
        &sample.region,
    )?;
    if !loss.is_finite() {
        return Ok((loss, model.trainable.zeros_like()));
    }
    Ok((loss, model.backward(&cache, &grad)?))
}

/// One optimizer step over `train.batch` samples.
pub fn train_step(state: &mut TrainState<f32>, data: &Dataset, cfg: &RunConfig) -> Result<StepLog> {
    let batch = cfg.train.batch;
    let mut grads = state.model.trainable.zeros_like();
    let mut modes = Vec::with_capacity(batch);
    let mut total = 0.0f64;
    for _ in 0..batch {
        let (sample, t, z1) = draw_sample(state, data, cfg)?;
        let (loss, g) = match sample_loss(&state.model, &sample, t, &z1) {
            Ok(r) => r,
            Err(e)
                if matches!(
                    e.downcast_ref(),
                    Some(scenecomp_core::Error::NonFinite { .. })
                ) =>
            {
                bail!(
                    "non-finite loss at step {} in mode {}: {e}",
                    state.step,
                    mode_tag(&sample.mode)
                )
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            bail!(
                "non-finite loss at step {} in mode {}",
                state.step,
                mode_tag(&sample.mode)
            );
        }
        accumulate(&mut grads, &g, 1.0 / batch as f32);
        total += f64::from(loss);
        modes.push(sample.mode);
    }
    state.optimizer.step(&mut state.model.trainable, &grads);
    let log = StepLog {
        step: state.step,
        modes,
        loss: total / batch as f64,
    };
    state.step += 1;
    Ok(log)
}

/// Runs until `state.step == cfg.train.steps`, calling `on_step` after
/// every step.
pub fn train(
    state: &mut TrainState<f32>,
    data: &Dataset,
    cfg: &RunConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<()> {
    ensure!(!data.train.is_empty(), "dataset has no training clips");
    data.check_matches(&cfg.world)?;
    while state.step < cfg.train.steps {
        let log = train_step(state, data, cfg)?;
        on_step(&log);
    }
    Ok(())
}

pub fn to_checkpoint(state: &TrainState<f32>, cfg: &RunConfig) -> Checkpoint {
    state.to_checkpoint(&[(RUN_CONFIG_ENTRY.to_string(), cfg.to_toml().into_bytes())])
}

pub fn save(state: &TrainState<f32>, cfg: &RunConfig, path: &Path) -> Result<()> {
    to_checkpoint(state, cfg)
        .save(path)
        .with_context(|| format!("cannot write checkpoint {}", path.display()))
}

/// Loads a checkpoint and the run config stored with it.
pub fn load(path: &Path) -> Result<(TrainState<f32>, RunConfig)> {
    let ck = Checkpoint::load(path)
        .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    let state = TrainState::from_checkpoint(&ck)?;
    let text = std::str::from_utf8(ck.bytes_of(RUN_CONFIG_ENTRY)?)
        .context("stored run config is not text")?;
    Ok((state, RunConfig::parse(text, &[])?))
}

/// Closed-form expected loss of a predictor that always outputs zero:
/// `E|z1 - z_tgt|^2 = 1 + z_tgt^2` per counted element, averaged over all
/// elements.
pub fn zero_predictor_expected_loss(sample: &TrainSample) -> f64 {
    use scenecomp_core::flowmatch::LossRegion;
    let target = &sample.target;
    let n = target.len() as f64;
    let c = target.dim().3;
    let counted = |i: usize| match &sample.region {
        LossRegion::All => true,
        LossRegion::Within(m) => m.as_slice().expect("standard layout")[i / c] != 0.0,
    };
    target
        .as_standard_layout()
        .iter()
        .enumerate()
        .filter(|(i, _)| counted(*i))
        .map(|(_, z)| 1.0 + f64::from(*z).powi(2))
        .sum::<f64>()
        / n
}

/// Counts of each mode over a log.
pub fn mode_counts(logs: &[StepLog]) -> [usize; 3] {
    let mut out = [0; 3];
    for m in logs.iter().flat_map(|l| &l.modes) {
        out[match m.kind {
            ModeKind::SceneOnly => 0,
            ModeKind::MotionOnly => 1,
            ModeKind::Full => 2,
        }] += 1;
    }
    out
}
