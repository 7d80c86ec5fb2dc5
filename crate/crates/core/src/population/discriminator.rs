//! State classifier `q(i | s)` over population members.

use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::ObsScale;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Matrix, Mlp, MlpSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of each class's samples drawn from its most recent episodes.
    pub on_policy_ratio: f64,
    /// Number of recent episodes per agent treated as on-policy.
    pub on_policy_episodes: usize,
    /// Train once every this many environment steps.
    pub train_every: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            hidden_layers: 2,
            lr: 1e-5,
            batch_size: 256,
            on_policy_ratio: 0.5,
            on_policy_episodes: 2,
            train_every: 1,
        }
    }
}

/// Softmax classifier with layer-normalized ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T = f32> {
    net: Mlp<T>,
    opt: Adam<T>,
    obs_scale: ObsScale,
    classes: usize,
    trained_steps: u64,
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Float>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp()).ln();
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    out
}

impl<T: Float> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &DiscriminatorConfig, obs_scale: ObsScale, classes: usize, rng: &mut R) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("discriminator needs at least two classes".into()));
        }
        let spec = MlpSpec::uniform(
            obs_scale.dim(),
            config.hidden,
            config.hidden_layers,
            classes,
            Activation::Relu,
            Activation::Identity,
        )
        .with_layer_norm();
        Ok(Self {
            net: Mlp::new(&spec, rng)?,
            opt: Adam::new(AdamConfig::with_lr(config.lr)),
            obs_scale,
            classes,
            trained_steps: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn net(&self) -> &Mlp<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.net
    }

    /// Number of optimizer steps taken so far.
    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    fn inputs(&self, states: &[f32]) -> Matrix<T> {
        let d = self.obs_scale.dim();
        let n = states.len() / d;
        let mut m = Matrix::zeros(n, d);
        for r in 0..n {
            self.obs_scale.write(&states[r * d..(r + 1) * d], m.row_mut(r));
        }
        m
    }

    /// `log q(c | s)` for every row of raw states, `n x classes`.
    pub fn log_probs(&self, states: &[f32]) -> Result<Matrix<T>> {
        Ok(log_softmax(&self.net.forward(&self.inputs(states))?))
    }

    /// `log q(class | s) - log(1 / classes)` per row.
    pub fn raw_rewards(&self, states: &[f32], class: usize) -> Result<Vec<T>> {
        if class >= self.classes {
            return Err(Error::InputContract("class index out of range".into()));
        }
        let lp = self.log_probs(states)?;
        let prior = T::from(self.classes as f64).unwrap().ln();
        Ok((0..lp.rows()).map(|r| lp.get(r, class) + prior).collect())
    }

    /// Mean cross-entropy over a labeled batch, accumulating gradients.
    /// Returns `(loss, accuracy)`.
    pub fn loss_grad(&mut self, states: &[f32], labels: &[usize]) -> Result<(T, f64)> {
        let x = self.inputs(states);
        if x.rows() != labels.len() || labels.iter().any(|&l| l >= self.classes) {
            return Err(Error::InputContract("one in-range label per state required".into()));
        }
        let logits = self.net.forward_train(&x)?;
        let lp = log_softmax(&logits);
        let n = T::from(labels.len() as f64).unwrap();
        let mut up = Matrix::zeros(x.rows(), self.classes);
        let mut loss = T::zero();
        let mut correct = 0usize;
        for (r, &y) in labels.iter().enumerate() {
            loss = loss - lp.get(r, y) / n;
            let row = lp.row(r);
            let mut best = 0;
            for c in 0..self.classes {
                if row[c] > row[best] {
                    best = c;
                }
                let target = if c == y { T::one() } else { T::zero() };
                up.set(r, c, (row[c].exp() - target) / n);
            }
            correct += (best == y) as usize;
        }
        self.net.backward(&up)?;
        Ok((loss, correct as f64 / labels.len() as f64))
    }

    /// One optimizer step on a labeled batch. Returns batch accuracy.
    pub fn train_step(&mut self, states: &[f32], labels: &[usize]) -> Result<f64> {
        self.net.zero_grad();
        let (_, acc) = self.loss_grad(states, labels)?;
        self.opt.step(&mut self.net)?;
        self.trained_steps += 1;
        Ok(acc)
    }

    /// Fraction of rows whose most likely class equals the label.
    pub fn accuracy(&self, states: &[f32], labels: &[usize]) -> Result<f64> {
        let lp = self.log_probs(states)?;
        let mut correct = 0;
        for (r, &y) in labels.iter().enumerate() {
            let row = lp.row(r);
            let best = (0..self.classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            correct += (best == y) as usize;
        }
        Ok(correct as f64 / labels.len().max(1) as f64)
    }

    pub fn cast<U: Float>(&self) -> Discriminator<U> {
        Discriminator {
            net: self.net.cast(),
            opt: Adam::new(self.opt.config),
            obs_scale: self.obs_scale.clone(),
            classes: self.classes,
            trained_steps: self.trained_steps,
        }
    }
}

/// Per-class sample counts for a batch of `batch` states over `classes`
/// classes; counts differ by at most one.
pub fn balanced_counts(batch: usize, classes: usize) -> Vec<usize> {
    let base = batch / classes;
    let extra = batch % classes;
    (0..classes).map(|c| base + (c < extra) as usize).collect()
}

/// Source of states for one class: a recent on-policy range and the full
/// stored range, both as insertion numbers into a caller-owned buffer.
#[derive(Debug, Clone)]
pub struct ClassSource {
    pub recent: Range<u64>,
    pub history: Range<u64>,
}

/// Picks a class-balanced batch. Each class contributes its balanced count,
/// of which `round(ratio * count)` come from its recent range when that
/// range is nonempty. Returns `(index, class)` pairs.
pub fn balanced_batch<R: Rng + ?Sized>(
    sources: &[ClassSource],
    batch: usize,
    on_policy_ratio: f64,
    rng: &mut R,
) -> Result<Vec<(u64, usize)>> {
    let counts = balanced_counts(batch, sources.len());
    let mut out = Vec::with_capacity(batch);
    for (c, (src, &count)) in sources.iter().zip(&counts).enumerate() {
        if src.history.is_empty() {
            return Err(Error::State("a class has no stored states".into()));
        }
        let on = if src.recent.is_empty() {
            0
        } else {
            num_traits::float::FloatCore::round(on_policy_ratio * count as f64) as usize
        };
        for k in 0..count {
            let pool = if k < on { &src.recent } else { &src.history };
            out.push((rng.random_range(pool.clone()), c));
        }
    }
    Ok(out)
}
