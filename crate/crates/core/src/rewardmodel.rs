//! Bradley-Terry reward learning from pairwise segment preferences.
//!
//! A [`RewardModel`] is an ensemble of per-step reward networks with a tanh
//! head. The probability that segment 1 is preferred is the logistic
//! function of the difference of the two segments' summed rewards.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::ObsScale;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Matrix, Mlp, MlpSpec};

/// Where a segment came from: agent, episode and step window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub agent_id: usize,
    pub episode: u64,
    /// First step index within the episode.
    pub start: u32,
    pub len: u32,
}

/// Fixed-length run of raw `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub source: SegmentRef,
    obs_dim: usize,
    act_dim: usize,
    states: Vec<f32>,
    actions: Vec<f32>,
    gt_return: f64,
}

impl Segment {
    /// `states` and `actions` are row-major with `len` rows each.
    /// `gt_return` is kept for the simulated teacher only.
    pub fn new(
        source: SegmentRef,
        obs_dim: usize,
        act_dim: usize,
        states: Vec<f32>,
        actions: Vec<f32>,
        gt_return: f64,
    ) -> Result<Self> {
        let len = source.len as usize;
        if len == 0 || states.len() != len * obs_dim || actions.len() != len * act_dim {
            return Err(Error::InputContract(format!(
                "segment of length {len} needs {} state and {} action values",
                len * obs_dim,
                len * act_dim
            )));
        }
        Ok(Self {
            source,
            obs_dim,
            act_dim,
            states,
            actions,
            gt_return,
        })
    }

    pub fn len(&self) -> usize {
        self.source.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn states(&self) -> &[f32] {
        &self.states
    }

    pub fn actions(&self) -> &[f32] {
        &self.actions
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// First two state coordinates of every step, as drawn by the UI.
    pub fn points(&self) -> Vec<[f32; 2]> {
        self.states.chunks(self.obs_dim).map(|s| [s[0], s[1]]).collect()
    }

    pub(crate) fn gt_return(&self) -> f64 {
        self.gt_return
    }
}

/// Preference label `y = (y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub enum Label {
    /// Segment 0 preferred, `(1, 0)`.
    First,
    /// Segment 1 preferred, `(0, 1)`.
    Second,
    /// `(0.5, 0.5)`.
    Equal,
}

impl Label {
    pub fn y(self) -> [f64; 2] {
        match self {
            Label::First => [1.0, 0.0],
            Label::Second => [0.0, 1.0],
            Label::Equal => [0.5, 0.5],
        }
    }
}

impl From<Label> for [f64; 2] {
    fn from(l: Label) -> Self {
        l.y()
    }
}

impl TryFrom<[f64; 2]> for Label {
    type Error = String;

    fn try_from(y: [f64; 2]) -> core::result::Result<Self, String> {
        match y {
            [1.0, 0.0] => Ok(Label::First),
            [0.0, 1.0] => Ok(Label::Second),
            [0.5, 0.5] => Ok(Label::Equal),
            _ => Err(format!("label must be [1,0], [0,1] or [0.5,0.5], got {y:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherTag {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    /// Feedback session that produced the record.
    pub iter: u32,
    pub teacher: TeacherTag,
    pub seg0: Segment,
    pub seg1: Segment,
    pub label: Label,
}

/// `P[segment 1 preferred]` for summed rewards `sum0`, `sum1`, in a form
/// that never overflows.
pub fn bradley_terry(sum0: f64, sum1: f64) -> f64 {
    let d = sum1 - sum0;
    if d >= 0.0 {
        1.0 / (1.0 + Float::exp(-d))
    } else {
        let e = Float::exp(d);
        e / (1.0 + e)
    }
}

/// Cross-entropy of label `y` under `P[segment 1 preferred] = sigmoid(d)`.
pub fn preference_loss(d: f64, y: [f64; 2]) -> f64 {
    // -y0 ln(1 - p) - y1 ln p with ln p = -softplus(-d), ln(1-p) = -softplus(d)
    y[0] * softplus(d) + y[1] * softplus(-d)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + Float::ln_1p(Float::exp(-x))
    } else {
        Float::ln_1p(Float::exp(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Minibatch cap; the actual batch is `min(|D|, batch_max)`.
    pub batch_max: usize,
    pub ensemble: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            hidden_layers: 3,
            lr: 3e-4,
            epochs: 50,
            batch_max: 128,
            ensemble: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel<T = f32> {
    pub config: RewardConfig,
    obs_scale: ObsScale,
    act_dim: usize,
    members: Vec<Mlp<T>>,
    opts: Vec<Adam<T>>,
}

impl<T: Float> RewardModel<T> {
    pub fn new<R: Rng + ?Sized>(config: RewardConfig, obs_scale: ObsScale, act_dim: usize, rng: &mut R) -> Result<Self> {
        if config.ensemble == 0 || config.hidden == 0 || config.batch_max == 0 {
            return Err(Error::Config("reward model needs ensemble, hidden and batch_max > 0".into()));
        }
        let spec = Self::spec(&config, obs_scale.dim(), act_dim);
        let members = (0..config.ensemble).map(|_| Mlp::new(&spec, rng)).collect::<Result<Vec<_>>>()?;
        let opts = (0..config.ensemble)
            .map(|_| Adam::new(AdamConfig::with_lr(config.lr)))
            .collect();
        Ok(Self {
            config,
            obs_scale,
            act_dim,
            members,
            opts,
        })
    }

    fn spec(config: &RewardConfig, obs: usize, act: usize) -> MlpSpec {
        MlpSpec::uniform(
            obs + act,
            config.hidden,
            config.hidden_layers,
            1,
            Activation::LeakyRelu,
            Activation::Tanh,
        )
    }

    pub fn members(&self) -> &[Mlp<T>] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp<T>] {
        &mut self.members
    }

    pub fn obs_scale(&self) -> &ObsScale {
        &self.obs_scale
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn inputs(&self, states: &[f32], actions: &[f32], n: usize) -> Matrix<T> {
        let o = self.obs_scale.dim();
        let a = self.act_dim;
        let mut m = Matrix::zeros(n, o + a);
        for r in 0..n {
            let row = m.row_mut(r);
            self.obs_scale.write(&states[r * o..(r + 1) * o], &mut row[..o]);
            for j in 0..a {
                row[o + j] = T::from(actions[r * a + j]).unwrap();
            }
        }
        m
    }

    /// Per-member outputs, `members x n`.
    fn member_outputs(&self, states: &[f32], actions: &[f32], n: usize) -> Result<Vec<Vec<T>>> {
        let x = self.inputs(states, actions, n);
        self.members.iter().map(|m| Ok(m.forward(&x)?.into_vec())).collect()
    }

    /// Ensemble-mean reward for `n` raw `(state, action)` rows.
    pub fn predict_batch(&self, states: &[f32], actions: &[f32], n: usize) -> Result<Vec<T>> {
        let outs = self.member_outputs(states, actions, n)?;
        let e = T::from(outs.len()).unwrap();
        Ok((0..n).map(|i| outs.iter().fold(T::zero(), |acc, o| acc + o[i]) / e).collect())
    }

    pub fn predict(&self, state: &[f32], action: &[f32]) -> Result<T> {
        Ok(self.predict_batch(state, action, 1)?[0])
    }

    /// Standard deviation of member outputs per row.
    pub fn uncertainty_batch(&self, states: &[f32], actions: &[f32], n: usize) -> Result<Vec<T>> {
        if self.members.len() < 2 {
            return Err(Error::Config("ensemble uncertainty needs at least two members".into()));
        }
        let outs = self.member_outputs(states, actions, n)?;
        let e = T::from(outs.len()).unwrap();
        Ok((0..n)
            .map(|i| {
                let mean = outs.iter().fold(T::zero(), |acc, o| acc + o[i]) / e;
                let var = outs.iter().fold(T::zero(), |acc, o| acc + (o[i] - mean) * (o[i] - mean)) / e;
                var.sqrt()
            })
            .collect())
    }

    pub fn ensemble_uncertainty(&self, state: &[f32], action: &[f32]) -> Result<T> {
        Ok(self.uncertainty_batch(state, action, 1)?[0])
    }

    /// Summed predicted reward of a segment, in `f64`.
    pub fn segment_sum(&self, seg: &Segment) -> Result<f64> {
        let r = self.predict_batch(seg.states(), seg.actions(), seg.len())?;
        Ok(r.iter().map(|v| v.to_f64().unwrap()).sum())
    }

    /// Probability that `seg1` is preferred over `seg0`.
    pub fn preference_prob(&self, seg0: &Segment, seg1: &Segment) -> Result<f64> {
        if seg0.len() != seg1.len() {
            return Err(Error::InputContract(format!(
                "segment lengths differ: {} vs {}",
                seg0.len(),
                seg1.len()
            )));
        }
        Ok(bradley_terry(self.segment_sum(seg0)?, self.segment_sum(seg1)?))
    }

    /// Mean cross-entropy of `member` over `records`, accumulating that
    /// member's gradients.
    pub fn loss_grad(&mut self, member: usize, records: &[&PreferenceRecord]) -> Result<f64> {
        let b = records.len();
        if b == 0 {
            return Err(Error::InputContract("empty preference batch".into()));
        }
        let len = records[0].seg0.len();
        if records.iter().any(|r| r.seg0.len() != len || r.seg1.len() != len) {
            return Err(Error::InputContract("all segments in a batch must share one length".into()));
        }
        let o = self.obs_scale.dim();
        let a = self.act_dim;
        let mut states = Vec::with_capacity(2 * b * len * o);
        let mut actions = Vec::with_capacity(2 * b * len * a);
        for r in records {
            for seg in [&r.seg0, &r.seg1] {
                states.extend_from_slice(seg.states());
                actions.extend_from_slice(seg.actions());
            }
        }
        let x = self.inputs(&states, &actions, 2 * b * len);
        let net = &mut self.members[member];
        let out = net.forward_train(&x)?;
        let mut up = Matrix::zeros(2 * b * len, 1);
        let mut total = 0.0;
        for (k, r) in records.iter().enumerate() {
            let base = 2 * k * len;
            let sum0: f64 = (0..len).map(|t| out.get(base + t, 0).to_f64().unwrap()).sum();
            let sum1: f64 = (0..len).map(|t| out.get(base + len + t, 0).to_f64().unwrap()).sum();
            let d = sum1 - sum0;
            let y = r.label.y();
            total += preference_loss(d, y);
            let g = (bradley_terry(sum0, sum1) - y[1]) / b as f64;
            let (g0, g1) = (T::from(-g).unwrap(), T::from(g).unwrap());
            for t in 0..len {
                up.set(base + t, 0, g0);
                up.set(base + len + t, 0, g1);
            }
        }
        net.backward(&up)?;
        Ok(total / b as f64)
    }

    /// Trains every member for `epochs` passes over `data` with minibatches of
    /// `min(|data|, batch_max)`. Returns the mean loss of each epoch, averaged
    /// over members.
    pub fn train<R: Rng + ?Sized>(&mut self, data: &[PreferenceRecord], epochs: usize, rng: &mut R) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::InputContract("empty preference dataset".into()));
        }
        let batch = data.len().min(self.config.batch_max);
        let mut epoch_losses = vec![0.0; epochs];
        let mut order: Vec<usize> = (0..data.len()).collect();
        for member in 0..self.members.len() {
            for loss_slot in epoch_losses.iter_mut() {
                order.shuffle(rng);
                let mut sum = 0.0;
                for chunk in order.chunks(batch) {
                    let recs: Vec<&PreferenceRecord> = chunk.iter().map(|&i| &data[i]).collect();
                    self.members[member].zero_grad();
                    sum += self.loss_grad(member, &recs)? * chunk.len() as f64;
                    self.opts[member].step(&mut self.members[member])?;
                }
                *loss_slot += sum / data.len() as f64 / self.members.len() as f64;
            }
        }
        Ok(epoch_losses)
    }

    pub fn cast<U: Float>(&self) -> RewardModel<U> {
        RewardModel {
            config: self.config.clone(),
            obs_scale: self.obs_scale.clone(),
            act_dim: self.act_dim,
            members: self.members.iter().map(|m| m.cast()).collect(),
            opts: self.opts.iter().map(|o| Adam::new(o.config)).collect(),
        }
    }
}
