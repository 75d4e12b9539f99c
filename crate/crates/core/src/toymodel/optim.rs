use serde::{Deserialize, Serialize};

use super::model::{ParamGroup, Trainable};
use crate::error::{invalid, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr_adapters: f64,
    pub lr_motion: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_adapters: 1e-3,
            lr_motion: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_adapters >= 0.0
            && self.lr_motion >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(invalid(format!("bad optimizer settings {self:?}")));
        }
        Ok(())
    }

    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Adapters => self.lr_adapters,
            ParamGroup::Motion => self.lr_motion,
        }
    }
}

/// Adam over the trainable set, with one learning rate per group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    pub steps: u64,
    pub first: Vec<Vec<S>>,
    pub second: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &Trainable<S>) -> Result<Self> {
        config.validate()?;
        let mut first = Vec::new();
        params.visit("", &mut |_, p| first.push(vec![S::zero(); p.len()]));
        let second = first.clone();
        Ok(Self {
            config,
            steps: 0,
            first,
            second,
        })
    }

    pub fn step(&mut self, params: &mut Trainable<S>, grads: &Trainable<S>) {
        let mut g = Vec::with_capacity(self.first.len());
        grads.visit("", &mut |_, p| g.push(p.to_vec()));
        self.steps += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let eps = S::lit(c.eps);
        let mut i = 0;
        params.visit_mut("", &mut |name, p| {
            let lr = S::lit(c.lr(Trainable::<S>::group_of(&name)));
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                let gj = g[i][j];
                m[j] = b1 * m[j] + (S::one() - b1) * gj;
                v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
                let mhat = m[j] / S::lit(bc1);
                let vhat = v[j] / S::lit(bc2);
                p[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
            i += 1;
        });
    }
}
