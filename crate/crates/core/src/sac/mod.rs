//! Soft actor-critic with a tanh-squashed Gaussian policy.
//!
//! The agent owns an actor, twin critics with Polyak-averaged targets and a
//! learnable log-temperature. Observations are stored raw in the replay
//! buffer and normalized with the agent's [`ObsScale`] on the way into the
//! networks. All rewards fed to [`SacAgent::update_critic`] are supplied by
//! the caller, which decides how learned, diversity and exploration terms
//! are combined.

mod buffer;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::ObsScale;
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, AdamConfig, Matrix, Mlp, MlpSpec};

pub use buffer::{Batch, EpisodeSpan, ReplayBuffer, RewardSource, Transition};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Stabilizer inside `ln(1 - tanh(u)^2 + TANH_EPS)`.
pub const TANH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub batch_size: usize,
    pub actor_update_every: u64,
    pub target_update_every: u64,
    /// Uniform random actions for this many environment steps.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            hidden_layers: 2,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 5e-4,
            critic_lr: 5e-4,
            alpha_lr: 1e-4,
            init_alpha: 0.1,
            batch_size: 256,
            actor_update_every: 1,
            target_update_every: 2,
            warmup_steps: 200,
            updates_per_step: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.hidden == 0 {
            bad.push("hidden");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push("gamma");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            bad.push("tau");
        }
        if !(self.init_alpha > 0.0) {
            bad.push("init_alpha");
        }
        if self.batch_size == 0 {
            bad.push("batch_size");
        }
        if self.actor_update_every == 0 {
            bad.push("actor_update_every");
        }
        if self.target_update_every == 0 {
            bad.push("target_update_every");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid sac keys: {}", bad.join(", "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Mean,
}

/// Reparameterized policy sample for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample<T> {
    pub actions: Matrix<T>,
    pub log_prob: Vec<T>,
    sigma: Matrix<T>,
    /// `tanh` of the raw log-std head output.
    rho_tanh: Matrix<T>,
}

fn c<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

/// Maps the raw log-std head output into `[LOG_STD_MIN, LOG_STD_MAX]`.
pub fn bounded_log_std<T: Float>(rho: T) -> T {
    c::<T>(LOG_STD_MIN) + c::<T>(0.5 * (LOG_STD_MAX - LOG_STD_MIN)) * (rho.tanh() + T::one())
}

/// Squashes actor outputs `[mu | rho]` with standard-normal `noise`.
pub fn squash<T: Float>(head: &Matrix<T>, noise: &Matrix<T>) -> PolicySample<T> {
    let b = head.rows();
    let a = noise.cols();
    let mut actions = Matrix::zeros(b, a);
    let mut sigma = Matrix::zeros(b, a);
    let mut rho_tanh = Matrix::zeros(b, a);
    let mut log_prob = vec![T::zero(); b];
    for r in 0..b {
        let row = head.row(r);
        let mut lp = T::zero();
        for j in 0..a {
            let th = row[a + j].tanh();
            let ell = c::<T>(LOG_STD_MIN) + c::<T>(0.5 * (LOG_STD_MAX - LOG_STD_MIN)) * (th + T::one());
            let s = ell.exp();
            let e = noise.get(r, j);
            let u = row[j] + s * e;
            let act = u.tanh();
            lp = lp - c::<T>(0.5) * e * e - ell - c::<T>(HALF_LN_2PI) - (T::one() - act * act + c(TANH_EPS)).ln();
            actions.set(r, j, act);
            sigma.set(r, j, s);
            rho_tanh.set(r, j, th);
        }
        log_prob[r] = lp;
    }
    PolicySample {
        actions,
        log_prob,
        sigma,
        rho_tanh,
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent<T = f32> {
    pub config: SacConfig,
    obs_scale: ObsScale,
    act_dim: usize,
    actor: Mlp<T>,
    critics: [Mlp<T>; 2],
    targets: [Mlp<T>; 2],
    log_alpha: T,
    actor_opt: Adam<T>,
    critic_opt: [Adam<T>; 2],
    alpha_opt: Adam<T>,
    updates: u64,
}

impl<T: Float> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(config: SacConfig, obs_scale: ObsScale, act_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let obs = obs_scale.dim();
        let actor_spec = MlpSpec::uniform(
            obs,
            config.hidden,
            config.hidden_layers,
            2 * act_dim,
            Activation::Relu,
            Activation::Identity,
        );
        let critic_spec = MlpSpec::uniform(
            obs + act_dim,
            config.hidden,
            config.hidden_layers,
            1,
            Activation::Relu,
            Activation::Identity,
        );
        let actor = Mlp::new(&actor_spec, rng)?;
        let critics = [Mlp::new(&critic_spec, rng)?, Mlp::new(&critic_spec, rng)?];
        let targets = critics.clone();
        Ok(Self {
            log_alpha: c::<T>(config.init_alpha.ln()),
            actor_opt: Adam::new(AdamConfig::with_lr(config.actor_lr)),
            critic_opt: [
                Adam::new(AdamConfig::with_lr(config.critic_lr)),
                Adam::new(AdamConfig::with_lr(config.critic_lr)),
            ],
            alpha_opt: Adam::new(AdamConfig::with_lr(config.alpha_lr)),
            config,
            obs_scale,
            act_dim,
            actor,
            critics,
            targets,
            updates: 0,
        })
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_scale.dim()
    }

    pub fn obs_scale(&self) -> &ObsScale {
        &self.obs_scale
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> T {
        self.log_alpha
    }

    pub fn set_log_alpha(&mut self, v: T) {
        self.log_alpha = v;
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn actor(&self) -> &Mlp<T> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp<T> {
        &mut self.actor
    }

    pub fn critics(&self) -> &[Mlp<T>; 2] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Mlp<T>; 2] {
        &mut self.critics
    }

    pub fn targets(&self) -> &[Mlp<T>; 2] {
        &self.targets
    }

    pub fn targets_mut(&mut self) -> &mut [Mlp<T>; 2] {
        &mut self.targets
    }

    /// Copies actor, critic and target parameters from `other`.
    /// Temperature and optimizer state are left alone.
    pub fn copy_networks_from(&mut self, other: &SacAgent<T>) -> Result<()> {
        self.actor.copy_params_from(&other.actor)?;
        for k in 0..2 {
            self.critics[k].copy_params_from(&other.critics[k])?;
            self.targets[k].copy_params_from(&other.targets[k])?;
        }
        Ok(())
    }

    /// Normalized observation matrix from raw row-major observations.
    pub fn observations(&self, raw: &[f32], rows: usize) -> Matrix<T> {
        let d = self.obs_dim();
        let mut m = Matrix::zeros(rows, d);
        for r in 0..rows {
            self.obs_scale.write(&raw[r * d..(r + 1) * d], m.row_mut(r));
        }
        m
    }

    fn actions_matrix(&self, raw: &[f32], rows: usize) -> Matrix<T> {
        let data = raw.iter().map(|&v| c::<T>(v as f64)).collect();
        Matrix::from_vec(rows, self.act_dim, data).expect("action batch shape")
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix<T> {
        let data = (0..rows * self.act_dim)
            .map(|_| c::<T>(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Matrix::from_vec(rows, self.act_dim, data).unwrap()
    }

    /// Uniform action in `[-1, 1]` per dimension, used during warmup.
    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f32> {
        (0..self.act_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    /// Action for one raw observation. Mean mode is deterministic and
    /// does not consume randomness.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f32], mode: ActMode, rng: &mut R) -> Result<Vec<f32>> {
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InputContract("non-finite observation".into()));
        }
        let x = self.observations(obs, 1);
        let head = self.actor.forward(&x)?;
        let out = match mode {
            ActMode::Mean => (0..self.act_dim).map(|j| head.get(0, j).tanh()).collect::<Vec<T>>(),
            ActMode::Sample => {
                let noise = self.sample_noise(1, rng);
                squash(&head, &noise).actions.into_vec()
            }
        };
        Ok(out.into_iter().map(|v| v.to_f32().unwrap()).collect())
    }

    /// Soft Bellman targets for a batch, with explicit policy noise for `s'`.
    pub fn critic_targets(&self, batch: &Batch, rewards: &[T], noise: &Matrix<T>) -> Result<Vec<T>> {
        let next = self.observations(&batch.next_states, batch.len);
        let head = self.actor.forward(&next)?;
        let pol = squash(&head, noise);
        let input = next.hcat(&pol.actions)?;
        let q1 = self.targets[0].forward(&input)?;
        let q2 = self.targets[1].forward(&input)?;
        let alpha = self.alpha();
        let gamma = c::<T>(self.config.gamma);
        let mut y = Vec::with_capacity(batch.len);
        for i in 0..batch.len {
            let soft = q1.get(i, 0).min(q2.get(i, 0)) - alpha * pol.log_prob[i];
            let mask = if batch.done[i] { T::zero() } else { T::one() };
            let v = rewards[i] + gamma * mask * soft;
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite critic target at row {i}: r={:?} q1={:?} q2={:?} logp={:?}",
                    rewards[i].to_f64(),
                    q1.get(i, 0).to_f64(),
                    q2.get(i, 0).to_f64(),
                    pol.log_prob[i].to_f64()
                )));
            }
            y.push(v);
        }
        Ok(y)
    }

    /// Mean squared Bellman error summed over both critics, accumulating
    /// critic gradients. Does not step the optimizers.
    pub fn critic_loss_grad(&mut self, batch: &Batch, targets: &[T]) -> Result<T> {
        let input = self.observations(&batch.states, batch.len).hcat(&self.actions_matrix(&batch.actions, batch.len))?;
        let n = c::<T>(batch.len as f64);
        let mut total = T::zero();
        for critic in &mut self.critics {
            let q = critic.forward_train(&input)?;
            let mut up = Matrix::zeros(batch.len, 1);
            for i in 0..batch.len {
                let d = q.get(i, 0) - targets[i];
                total = total + d * d / n;
                up.set(i, 0, c::<T>(2.0) * d / n);
            }
            critic.backward(&up)?;
        }
        Ok(total)
    }

    /// One critic step toward the soft Bellman target. Returns the loss.
    pub fn update_critic<R: Rng + ?Sized>(&mut self, batch: &Batch, rewards: &[T], rng: &mut R) -> Result<T> {
        if rewards.len() != batch.len {
            return Err(Error::InputContract("one reward per transition required".into()));
        }
        let noise = self.sample_noise(batch.len, rng);
        let y = self.critic_targets(batch, rewards, &noise)?;
        for critic in &mut self.critics {
            critic.zero_grad();
        }
        let loss = self.critic_loss_grad(batch, &y)?;
        for k in 0..2 {
            self.critic_opt[k].step(&mut self.critics[k])?;
        }
        Ok(loss)
    }

    /// Actor objective `mean(alpha * log pi - min Q)` for fixed noise,
    /// accumulating actor gradients. Returns `(loss, mean log pi)`.
    pub fn actor_loss_grad(&mut self, states: &Matrix<T>, noise: &Matrix<T>) -> Result<(T, T)> {
        let b = states.rows();
        let a = self.act_dim;
        let n = c::<T>(b as f64);
        let alpha = self.alpha();
        let head = self.actor.forward_train(states)?;
        let pol = squash(&head, noise);
        let input = states.hcat(&pol.actions)?;
        let q1 = self.critics[0].forward_train(&input)?;
        let mut mask1 = Matrix::zeros(b, 1);
        let mut mask2 = Matrix::zeros(b, 1);
        let q2 = self.critics[1].forward(&input)?;
        let mut loss = T::zero();
        let mut mean_lp = T::zero();
        for i in 0..b {
            let (q, first) = if q1.get(i, 0) <= q2.get(i, 0) {
                (q1.get(i, 0), true)
            } else {
                (q2.get(i, 0), false)
            };
            if first {
                mask1.set(i, 0, T::one());
            } else {
                mask2.set(i, 0, T::one());
            }
            loss = loss + (alpha * pol.log_prob[i] - q) / n;
            mean_lp = mean_lp + pol.log_prob[i] / n;
        }
        let g1 = self.critics[0].backward_input(&mask1)?;
        self.critics[1].forward_train(&input)?;
        let g2 = self.critics[1].backward_input(&mask2)?;
        let obs = states.cols();
        let mut up = Matrix::zeros(b, 2 * a);
        for i in 0..b {
            for j in 0..a {
                let g = g1.get(i, obs + j) + g2.get(i, obs + j);
                let act = pol.actions.get(i, j);
                let one_m = T::one() - act * act;
                let du = (alpha * c::<T>(2.0) * act * one_m / (one_m + c(TANH_EPS)) - g * one_m) / n;
                let dell = -alpha / n + du * pol.sigma.get(i, j) * noise.get(i, j);
                let th = pol.rho_tanh.get(i, j);
                let drho = dell * c::<T>(0.5 * (LOG_STD_MAX - LOG_STD_MIN)) * (T::one() - th * th);
                up.set(i, j, du);
                up.set(i, a + j, drho);
            }
        }
        self.actor.backward(&up)?;
        Ok((loss, mean_lp))
    }

    /// Target entropy `-|A|`.
    pub fn target_entropy(&self) -> T {
        -c::<T>(self.act_dim as f64)
    }

    /// Gradient of the temperature loss with respect to `log alpha`
    /// given the batch mean of `log pi`.
    pub fn temperature_grad(&self, mean_log_prob: T) -> T {
        self.alpha() * (-mean_log_prob - self.target_entropy())
    }

    /// One actor step and one temperature step. Returns `(loss, alpha)`.
    pub fn update_actor_and_temperature<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(T, T)> {
        let states = self.observations(&batch.states, batch.len);
        let noise = self.sample_noise(batch.len, rng);
        self.actor.zero_grad();
        let (loss, mean_lp) = self.actor_loss_grad(&states, &noise)?;
        self.actor_opt.step(&mut self.actor)?;
        let mut g = [self.temperature_grad(mean_lp)];
        if !g[0].is_finite() {
            return Err(Error::Numerical("non-finite temperature gradient".into()));
        }
        let mut p = [self.log_alpha];
        self.alpha_opt.apply(&mut [(&mut p[..], &mut g[..])]);
        self.log_alpha = p[0];
        Ok((loss, self.alpha()))
    }

    /// Polyak-averages the targets toward the critics.
    pub fn update_targets(&mut self) -> Result<()> {
        let tau = c::<T>(self.config.tau);
        for k in 0..2 {
            self.targets[k].polyak_from(&self.critics[k], tau)?;
        }
        Ok(())
    }

    /// Full update on one batch following the configured schedule.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rewards: &[T], rng: &mut R) -> Result<UpdateStats> {
        let critic_loss = self.update_critic(batch, rewards, rng)?;
        self.updates += 1;
        let mut stats = UpdateStats {
            critic_loss: critic_loss.to_f64().unwrap(),
            ..UpdateStats::default()
        };
        if self.updates % self.config.actor_update_every == 0 {
            let (loss, _) = self.update_actor_and_temperature(batch, rng)?;
            stats.actor_loss = loss.to_f64();
        }
        if self.updates % self.config.target_update_every == 0 {
            self.update_targets()?;
        }
        stats.alpha = self.alpha().to_f64().unwrap();
        Ok(stats)
    }

    /// Converts every network to another float type, e.g. for gradient checks.
    pub fn cast<U: Float>(&self) -> SacAgent<U> {
        SacAgent {
            config: self.config.clone(),
            obs_scale: self.obs_scale.clone(),
            act_dim: self.act_dim,
            actor: self.actor.cast(),
            critics: [self.critics[0].cast(), self.critics[1].cast()],
            targets: [self.targets[0].cast(), self.targets[1].cast()],
            log_alpha: U::from(self.log_alpha).unwrap(),
            actor_opt: Adam::new(self.actor_opt.config),
            critic_opt: [Adam::new(self.critic_opt[0].config), Adam::new(self.critic_opt[1].config)],
            alpha_opt: Adam::new(self.alpha_opt.config),
            updates: self.updates,
        }
    }
}

#[cfg(test)]
mod tests;
