//! Run manifest: everything that determines an experiment besides the seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::population::DiscriminatorConfig;
use crate::rewardmodel::RewardConfig;
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pb2,
    Qpa,
    Pebble,
    Rune,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pb2 => "pb2",
            Algorithm::Qpa => "qpa",
            Algorithm::Pebble => "pebble",
            Algorithm::Rune => "rune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub seeds: Vec<u64>,
    /// Total number of preference labels.
    pub feedback_budget: usize,
    pub queries_per_iter: usize,
    pub segment_len: usize,
    /// Teacher similarity threshold.
    pub epsilon: f64,
    /// Literal `epsilon * max(R0, R1)` teacher threshold.
    pub strict_threshold: bool,
    /// Diversity coefficient.
    pub lambda: f64,
    /// Performance threshold relative to the reference agent.
    pub alpha: f64,
    /// Number of agents for population-based algorithms.
    pub population: usize,
    /// Environment steps with the diversity bonus disabled after every
    /// reward-model update. `None` means a quarter of `interact_steps`.
    pub suspension_steps: Option<usize>,
    /// Draw part of every discriminator batch from recent episodes.
    pub on_policy: bool,
    /// Copy reference networks into the diverse agents after each session.
    pub inherit: bool,
    /// Let the discriminator classify the reference agent as well.
    pub disc_include_ref: bool,
    /// Unsupervised state-entropy steps per agent before the first session.
    pub pretrain_steps: usize,
    /// Environment steps per agent after each feedback session.
    pub interact_steps: usize,
    pub eval_episodes: usize,
    /// Recent episodes per agent that feed the query pool.
    pub recent_episodes: usize,
    pub tracker_window: usize,
    pub ema_decay: f64,
    pub diversity_clip: f64,
    pub knn_k: usize,
    /// Exploration bonus weight for the uncertainty-driven baseline.
    pub rune_beta: f64,
    pub replay_capacity: usize,
    pub sac: SacConfig,
    pub reward: RewardConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Pb2,
            env: EnvKind::Nav2d,
            seeds: vec![0, 1, 2, 3, 4],
            feedback_budget: 10,
            queries_per_iter: 2,
            segment_len: 50,
            epsilon: 0.0,
            strict_threshold: false,
            lambda: 0.5,
            alpha: 0.9,
            population: 3,
            suspension_steps: None,
            on_policy: true,
            inherit: true,
            disc_include_ref: false,
            pretrain_steps: 2000,
            interact_steps: 2000,
            eval_episodes: 10,
            recent_episodes: 5,
            tracker_window: 10,
            ema_decay: 0.99,
            diversity_clip: 2.0,
            knn_k: 5,
            rune_beta: 0.1,
            replay_capacity: 100_000,
            sac: SacConfig::default(),
            reward: RewardConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Navigation defaults: 2 queries per session up to 10 labels.
    pub fn nav2d() -> Self {
        Self::default()
    }

    /// Maze defaults: 4 queries per session up to 20 labels, longer episodes.
    pub fn pointmaze() -> Self {
        Self {
            env: EnvKind::PointMaze,
            feedback_budget: 20,
            queries_per_iter: 4,
            pretrain_steps: 6000,
            interact_steps: 6000,
            ..Self::default()
        }
    }

    /// Agents actually simulated: single-agent baselines always use one.
    pub fn effective_population(&self) -> usize {
        match self.algorithm {
            Algorithm::Pb2 => self.population,
            _ => 1,
        }
    }

    pub fn effective_suspension(&self) -> usize {
        self.suspension_steps.unwrap_or(self.interact_steps / 4)
    }

    /// Reward configuration with the ensemble the algorithm needs.
    pub fn effective_reward(&self) -> RewardConfig {
        let mut r = self.reward.clone();
        if self.algorithm == Algorithm::Rune && r.ensemble < 2 {
            r.ensemble = 3;
        }
        r
    }

    pub fn uses_diversity(&self) -> bool {
        self.algorithm == Algorithm::Pb2 && self.effective_population() >= 2
    }

    /// Number of discriminator classes.
    pub fn disc_classes(&self) -> usize {
        let n = self.effective_population();
        if self.disc_include_ref {
            n
        } else {
            n.saturating_sub(1)
        }
    }

    /// Checkpoints at which evaluation happens, in labels used.
    pub fn checkpoints(&self) -> Vec<usize> {
        let q = self.queries_per_iter.max(1);
        (1..=self.feedback_budget.div_ceil(q))
            .map(|k| (k * q).min(self.feedback_budget))
            .collect()
    }

    /// Checks every key and lists all offending ones.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let mut check = |ok: bool, key: &str| {
            if !ok {
                bad.push(key.into());
            }
        };
        check(!self.seeds.is_empty(), "seeds");
        check(self.queries_per_iter > 0, "queries_per_iter");
        check(self.segment_len > 0, "segment_len");
        check(self.epsilon >= 0.0 && self.epsilon.is_finite(), "epsilon");
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda");
        check((0.0..=1.0).contains(&self.alpha), "alpha");
        check(self.population >= 1, "population");
        check(
            self.algorithm != Algorithm::Pb2 || self.disc_classes() >= 2 || self.population == 1,
            "disc_include_ref",
        );
        check(self.eval_episodes > 0, "eval_episodes");
        check(self.recent_episodes > 0, "recent_episodes");
        check(self.tracker_window > 0, "tracker_window");
        check((0.0..1.0).contains(&self.ema_decay), "ema_decay");
        check(self.diversity_clip > 0.0, "diversity_clip");
        check(self.knn_k > 0, "knn_k");
        check(self.rune_beta >= 0.0, "rune_beta");
        check(self.replay_capacity > 0, "replay_capacity");
        let episode = crate::envs::EnvSpec::for_kind(self.env).episode_len;
        check(self.segment_len <= episode, "segment_len");
        check(
            (0.0..=1.0).contains(&self.discriminator.on_policy_ratio),
            "discriminator.on_policy_ratio",
        );
        check(self.discriminator.batch_size > 0, "discriminator.batch_size");
        check(self.discriminator.train_every > 0, "discriminator.train_every");
        if let Err(Error::Config(msg)) = self.sac.validate() {
            bad.push(msg);
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid configuration keys: {}", bad.join(", "))))
        }
    }
}
