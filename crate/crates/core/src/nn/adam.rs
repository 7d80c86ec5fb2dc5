use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network (or one scalar group).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update from the accumulated gradients, then clears them.
    ///
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, net: &mut Mlp<T>) -> Result<()> {
        let mut groups = net.param_groups();
        for (layer, _, g) in &groups {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { layer: *layer });
            }
        }
        let mut slices: Vec<(&mut [T], &mut [T])> = groups.iter_mut().map(|(_, p, g)| (&mut **p, &mut **g)).collect();
        self.apply(&mut slices);
        for (_, _, g) in groups.iter_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(())
    }

    /// Adam update over arbitrary `(parameter, gradient)` slice pairs.
    /// The group layout must be the same on every call.
    pub fn apply(&mut self, groups: &mut [(&mut [T], &mut [T])]) {
        if self.first.is_empty() {
            self.first = groups.iter().map(|(p, _)| alloc::vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c = |v: f64| T::from(v).unwrap();
        let b1 = c(self.config.beta1);
        let b2 = c(self.config.beta2);
        let corr1 = c(1.0 - num_traits::float::FloatCore::powi(self.config.beta1, self.step as i32));
        let corr2 = c(1.0 - num_traits::float::FloatCore::powi(self.config.beta2, self.step as i32));
        let lr = c(self.config.lr);
        let eps = c(self.config.eps);
        for (gi, (p, g)) in groups.iter_mut().enumerate() {
            let m = &mut self.first[gi];
            let v = &mut self.second[gi];
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let mhat = m[k] / corr1;
                let vhat = v[k] / corr2;
                p[k] = p[k] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
