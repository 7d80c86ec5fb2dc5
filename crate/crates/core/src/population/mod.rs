//! Population orchestration and the experiment loop.
//!
//! An [`Experiment`] owns every agent, the shared reward model and the
//! discriminator for one seed. Agent 0 is the reference agent. It trains on
//! the learned reward alone, while the other agents may receive a
//! performance-gated diversity bonus. The single-agent baselines run the
//! same loop with a population of one and a different query strategy.

pub mod discriminator;
pub mod entropy;
pub mod gating;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, RunConfig};
use crate::envs::{EnvKind, EnvSpec, EnvState, Step, Trajectory};
use crate::error::{Error, Result};
use crate::rewardmodel::{PreferenceRecord, RewardModel, Segment, SegmentRef};
use crate::sac::{ActMode, EpisodeSpan, ReplayBuffer, SacAgent, Transition};
use crate::teacher::Teacher;

pub use discriminator::{
    balanced_batch, balanced_counts, log_softmax, ClassSource, Discriminator, DiscriminatorConfig,
};
pub use entropy::{knn_log_distances, DISTANCE_FLOOR};
pub use gating::{
    applications_in_windows, audit_gate_log, passes_gate, EmaStandardizer, GateAudit, GateEvent,
    PerformanceTracker, replay_standardizer, standardized_stream,
};

/// Component tags for seed substreams.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const POLICY: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TEACHER: u64 = 4;
    pub const QUERY: u64 = 5;
    pub const DISCRIMINATOR: u64 = 6;
    pub const REWARD: u64 = 7;
    pub const BATCH: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const AUDIT: u64 = 10;
}

/// Independent generator for one component of one agent under a run seed.
pub fn substream(seed: u64, component: u64, agent: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(component * 1000 + agent as u64);
    r
}

/// One population member with its private environment and replay buffer.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: usize,
    pub sac: SacAgent<f32>,
    pub buffer: ReplayBuffer,
    pub tracker: PerformanceTracker,
    env_state: EnvState,
    episode: u64,
    episode_learned: f64,
    env_steps: u64,
    env_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
}

impl Agent {
    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Whole stored episode as a trajectory.
    pub fn trajectory(&self, span: &EpisodeSpan) -> Trajectory {
        let steps = (span.start..span.start + span.len as u64)
            .map(|n| {
                let t = self.buffer.get(n).expect("span is stored");
                Step {
                    t: t.t as usize,
                    state: t.state,
                    action: t.action,
                    next_state: t.next_state,
                    reward_gt: t.reward_gt,
                    reward_learned: t.reward_learned,
                }
            })
            .collect();
        Trajectory {
            agent_id: self.id,
            episode: span.episode,
            steps,
        }
    }

    /// Most recent complete episode.
    pub fn latest_trajectory(&self) -> Option<Trajectory> {
        self.buffer.recent_episodes(1).first().map(|s| self.trajectory(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Environment steps taken by each agent so far.
    pub step: u64,
    pub feedback: usize,
    /// Mean ground-truth return over the evaluation episodes.
    #[serde(rename = "return")]
    pub ret: f64,
    /// Whether any evaluation episode entered the maze goal cell.
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub iter: u32,
    pub answered: usize,
    pub skipped: usize,
    /// Distinct agents contributing segments to the candidate pool.
    pub pool_agents: usize,
    pub relabeled: usize,
    /// Largest gap between stored and fresh learned reward over the audit sample.
    pub relabel_max_error: f64,
    pub reward_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Pretrain,
    Feedback,
    Interact,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub phase: Phase,
    pub step: u64,
    pub feedback_used: usize,
    pub feedback_budget: usize,
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub seed: u64,
    /// Filled in by the harness from the serialized manifest.
    pub config_hash: u64,
    pub points: Vec<EvalPoint>,
    pub sessions: Vec<SessionReport>,
    pub gate_audit: GateAudit,
    pub max_abs_diversity: f64,
    pub feedback_used: usize,
}

/// All state of one seeded run.
pub struct Experiment {
    config: RunConfig,
    seed: u64,
    env: EnvSpec,
    agents: Vec<Agent>,
    reward: RewardModel<f32>,
    disc: Option<Discriminator<f32>>,
    standardizer: EmaStandardizer,
    uncertainty_scale: EmaStandardizer,
    suspension_left: usize,
    suspension_windows: Vec<(u64, u64)>,
    gate_log: Vec<GateEvent>,
    diversity_stream: Vec<f64>,
    record_diversity_stream: bool,
    max_abs_diversity: f64,
    preferences: Vec<PreferenceRecord>,
    queried: BTreeMap<(usize, u64), Trajectory>,
    feedback_used: usize,
    sessions: Vec<SessionReport>,
    points: Vec<EvalPoint>,
    clock: u64,
    phase: Phase,
    query_rng: ChaCha8Rng,
    reward_rng: ChaCha8Rng,
    disc_rng: ChaCha8Rng,
    audit_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
}

impl Experiment {
    pub fn new(config: RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = EnvSpec::for_kind(config.env);
        let n = config.effective_population();
        let agents = (0..n)
            .map(|i| {
                let mut init = substream(seed, stream::INIT, i);
                let mut env_rng = substream(seed, stream::ENV, i);
                Ok(Agent {
                    id: i,
                    sac: SacAgent::new(config.sac.clone(), env.obs_scale(), env.act_dim(), &mut init)?,
                    buffer: ReplayBuffer::new(env.obs_dim(), env.act_dim(), config.replay_capacity),
                    tracker: PerformanceTracker::new(config.tracker_window),
                    env_state: env.reset(env_rng.random()),
                    episode: 0,
                    episode_learned: 0.0,
                    env_steps: 0,
                    env_rng,
                    policy_rng: substream(seed, stream::POLICY, i),
                    batch_rng: substream(seed, stream::BATCH, i),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut reward_rng = substream(seed, stream::REWARD, 0);
        let reward = RewardModel::new(config.effective_reward(), env.obs_scale(), env.act_dim(), &mut reward_rng)?;
        let mut disc_rng = substream(seed, stream::DISCRIMINATOR, 0);
        let disc = if config.uses_diversity() {
            Some(Discriminator::new(
                &config.discriminator,
                env.obs_scale(),
                config.disc_classes(),
                &mut disc_rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            standardizer: EmaStandardizer::new(config.ema_decay, config.diversity_clip),
            uncertainty_scale: EmaStandardizer::new(config.ema_decay, f64::INFINITY),
            suspension_left: 0,
            suspension_windows: Vec::new(),
            gate_log: Vec::new(),
            diversity_stream: Vec::new(),
            record_diversity_stream: false,
            max_abs_diversity: 0.0,
            preferences: Vec::new(),
            queried: BTreeMap::new(),
            feedback_used: 0,
            sessions: Vec::new(),
            points: Vec::new(),
            clock: 0,
            phase: Phase::Idle,
            query_rng: substream(seed, stream::QUERY, 0),
            audit_rng: substream(seed, stream::AUDIT, 0),
            eval_rng: substream(seed, stream::EVAL, 0),
            reward_rng,
            disc_rng,
            config,
            seed,
            env,
            agents,
            reward,
            disc,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn env(&self) -> &EnvSpec {
        &self.env
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn reward_model(&self) -> &RewardModel<f32> {
        &self.reward
    }

    pub fn discriminator(&self) -> Option<&Discriminator<f32>> {
        self.disc.as_ref()
    }

    pub fn standardizer(&self) -> &EmaStandardizer {
        &self.standardizer
    }

    pub fn preferences(&self) -> &[PreferenceRecord] {
        &self.preferences
    }

    /// Every episode a queried segment came from, keyed by `(agent, episode)`.
    pub fn queried_trajectories(&self) -> &BTreeMap<(usize, u64), Trajectory> {
        &self.queried
    }

    pub fn gate_log(&self) -> &[GateEvent] {
        &self.gate_log
    }

    /// `(first step, length)` of every suspension window.
    pub fn suspension_windows(&self) -> &[(u64, u64)] {
        &self.suspension_windows
    }

    pub fn sessions(&self) -> &[SessionReport] {
        &self.sessions
    }

    pub fn points(&self) -> &[EvalPoint] {
        &self.points
    }

    pub fn max_abs_diversity(&self) -> f64 {
        self.max_abs_diversity
    }

    pub fn feedback_used(&self) -> usize {
        self.feedback_used
    }

    pub fn budget_exhausted(&self) -> bool {
        self.feedback_used >= self.config.feedback_budget
    }

    /// Keep every raw diversity value fed to the standardizer, for replay checks.
    pub fn record_diversity_stream(&mut self, on: bool) {
        self.record_diversity_stream = on;
    }

    pub fn diversity_stream(&self) -> &[f64] {
        &self.diversity_stream
    }

    pub fn progress(&self) -> Progress {
        Progress {
            phase: self.phase,
            step: self.clock,
            feedback_used: self.feedback_used,
            feedback_budget: self.config.feedback_budget,
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn suspended(&self) -> bool {
        self.suspension_left > 0
    }

    /// Discriminator class of an agent, if it has one.
    fn class_of(&self, agent: usize) -> Option<usize> {
        if self.config.disc_include_ref {
            Some(agent)
        } else {
            agent.checked_sub(1)
        }
    }

    /// Raw `log q(i|s) - log p(i)` for raw next states of agent `agent`;
    /// zero before the discriminator has been trained.
    fn raw_diversity(&self, agent: usize, states: &[f32]) -> Result<Vec<f64>> {
        let n = states.len() / self.env.obs_dim();
        match (&self.disc, self.class_of(agent)) {
            (Some(d), Some(c)) if d.trained_steps() > 0 => {
                Ok(d.raw_rewards(states, c)?.into_iter().map(|v| v as f64).collect())
            }
            _ => Ok(vec![0.0; n]),
        }
    }

    /// Emitted diversity reward for one state of a diverse agent, EMA
    /// standardized and clipped. Zero during suspension.
    pub fn diversity_reward(&mut self, agent: usize, state: &[f32]) -> Result<f64> {
        if agent == 0 && !self.config.disc_include_ref {
            return Err(Error::InputContract("the reference agent has no diversity reward".into()));
        }
        let trained = self.disc.as_ref().is_some_and(|d| d.trained_steps() > 0);
        if !trained {
            return Ok(0.0);
        }
        let raw = self.raw_diversity(agent, state)?[0];
        self.standardizer.update(raw);
        if self.record_diversity_stream {
            self.diversity_stream.push(raw);
        }
        let v = if self.suspended() { 0.0 } else { self.standardizer.standardize(raw) };
        self.max_abs_diversity = self.max_abs_diversity.max(v.abs());
        Ok(v)
    }

    /// One environment step for agent `i`. Returns the stored transition.
    fn collect(&mut self, i: usize, random: bool) -> Result<()> {
        let env = &self.env;
        let a = &mut self.agents[i];
        let obs = env.observe(&a.env_state);
        let action = if random || a.env_steps < a.sac.config.warmup_steps as u64 {
            a.sac.random_action(&mut a.policy_rng)
        } else {
            a.sac.act(&obs, ActMode::Sample, &mut a.policy_rng)?
        };
        let (next, r_gt) = env.step(&a.env_state, [action[0] as f64, action[1] as f64])?;
        let next_obs = env.observe(&next);
        let last = env.is_last_step(&next);
        let t = a.env_state.t as u32;
        let r_learned = self.reward.predict(&obs, &action)?;
        let r_div = if self.config.uses_diversity() && self.class_of(i).is_some() {
            self.diversity_reward(i, &next_obs)?
        } else {
            0.0
        };
        let a = &mut self.agents[i];
        a.buffer.push(&Transition {
            state: obs,
            action,
            next_state: next_obs,
            done: false,
            reward_learned: r_learned,
            reward_diversity: r_div as f32,
            reward_gt: r_gt,
            episode: a.episode,
            t,
        })?;
        a.env_steps += 1;
        a.episode_learned += r_learned as f64;
        if last {
            a.buffer.end_episode();
            a.tracker.push(a.episode_learned);
            a.episode_learned = 0.0;
            a.episode += 1;
            a.env_state = self.env.reset(a.env_rng.random());
        } else {
            a.env_state = next;
        }
        Ok(())
    }

    fn ready_to_update(&self, i: usize) -> bool {
        let a = &self.agents[i];
        a.env_steps >= a.sac.config.warmup_steps as u64 && a.buffer.len() >= a.sac.config.batch_size
    }

    /// SAC update for agent `i` on the state-entropy reward.
    fn pretrain_update(&mut self, i: usize) -> Result<()> {
        if !self.ready_to_update(i) {
            return Ok(());
        }
        let k = self.config.knn_k;
        let a = &mut self.agents[i];
        for _ in 0..a.sac.config.updates_per_step {
            let batch = a.buffer.sample(a.sac.config.batch_size, &mut a.batch_rng)?;
            let normalized = a.sac.observations(&batch.next_states, batch.len);
            let rewards = knn_log_distances(normalized.as_slice(), a.sac.obs_dim(), k);
            a.sac.update(&batch, &rewards, &mut a.policy_rng)?;
        }
        Ok(())
    }

    /// SAC update for agent `i` on the learned reward, with the gated
    /// diversity bonus or the uncertainty bonus where applicable.
    fn policy_update(&mut self, i: usize) -> Result<()> {
        if !self.ready_to_update(i) {
            return Ok(());
        }
        let updates = self.agents[i].sac.config.updates_per_step;
        for _ in 0..updates {
            let a = &mut self.agents[i];
            let batch = a.buffer.sample(a.sac.config.batch_size, &mut a.batch_rng)?;
            let mut rewards = batch.reward_learned.clone();
            if self.config.algorithm == Algorithm::Rune {
                let u = self.reward.uncertainty_batch(&batch.states, &batch.actions, batch.len)?;
                let mean_u = u.iter().map(|&v| v as f64).sum::<f64>() / u.len() as f64;
                self.uncertainty_scale.update(mean_u);
                let scale = self.uncertainty_scale.mean().max(1e-8);
                for (r, v) in rewards.iter_mut().zip(&u) {
                    *r += (self.config.rune_beta * *v as f64 / scale) as f32;
                }
            }
            if self.config.uses_diversity() {
                let applied = self.gate_decision(i);
                if applied {
                    let raw = self.raw_diversity(i, &batch.next_states)?;
                    let lambda = self.config.lambda;
                    for (r, x) in rewards.iter_mut().zip(raw) {
                        let v = self.standardizer.standardize(x);
                        self.max_abs_diversity = self.max_abs_diversity.max(v.abs());
                        *r += (lambda * v) as f32;
                    }
                }
            }
            let a = &mut self.agents[i];
            a.sac.update(&batch, &rewards, &mut a.policy_rng)?;
        }
        Ok(())
    }

    /// Decides and logs whether agent `i` gets the diversity bonus now.
    fn gate_decision(&mut self, i: usize) -> bool {
        let tracker_mean = self.agents[i].tracker.mean();
        let reference_mean = self.agents[0].tracker.mean();
        let suspended = self.suspended();
        let eligible = i != 0 && self.class_of(i).is_some() && self.config.lambda > 0.0;
        let trained = self.disc.as_ref().is_some_and(|d| d.trained_steps() > 0);
        let applied = eligible
            && trained
            && !suspended
            && matches!((tracker_mean, reference_mean), (Some(ri), Some(rr)) if passes_gate(ri, rr, self.config.alpha));
        self.gate_log.push(GateEvent {
            step: self.clock,
            agent: i,
            tracker_mean,
            reference_mean,
            suspended,
            applied,
        });
        applied
    }

    /// One class-balanced discriminator step, if every class has data.
    /// Returns the batch accuracy.
    pub fn train_discriminator(&mut self) -> Result<Option<f64>> {
        let Some(disc) = self.disc.as_mut() else {
            return Ok(None);
        };
        let cfg = &self.config.discriminator;
        let per_class = cfg.batch_size.div_ceil(disc.classes());
        let episode_len = self.env.episode_len;
        let members: Vec<usize> = (0..self.agents.len())
            .filter(|&i| self.config.disc_include_ref || i != 0)
            .collect();
        if members.iter().any(|&i| self.agents[i].buffer.len() < per_class) {
            return Ok(None);
        }
        let sources: Vec<ClassSource> = members
            .iter()
            .map(|&i| {
                let b = &self.agents[i].buffer;
                ClassSource {
                    recent: b.recent(cfg.on_policy_episodes * episode_len),
                    history: b.stored(),
                }
            })
            .collect();
        let ratio = if self.config.on_policy { cfg.on_policy_ratio } else { 0.0 };
        let picks = balanced_batch(&sources, cfg.batch_size, ratio, &mut self.disc_rng)?;
        let mut states = Vec::with_capacity(picks.len() * self.env.obs_dim());
        let mut labels = Vec::with_capacity(picks.len());
        for &(n, c) in &picks {
            states.extend_from_slice(self.agents[members[c]].buffer.next_state(n));
            labels.push(c);
        }
        Ok(Some(disc.train_step(&states, &labels)?))
    }

    fn tick(&mut self) {
        self.clock += 1;
        self.suspension_left = self.suspension_left.saturating_sub(1);
    }

    /// Unsupervised state-entropy phase.
    pub fn pretrain(&mut self) -> Result<()> {
        self.phase = Phase::Pretrain;
        for _ in 0..self.config.pretrain_steps {
            for i in 0..self.agents.len() {
                self.collect(i, false)?;
                self.pretrain_update(i)?;
            }
            self.maybe_train_discriminator()?;
            self.tick();
        }
        Ok(())
    }

    fn maybe_train_discriminator(&mut self) -> Result<()> {
        if self.disc.is_some() && self.clock % self.config.discriminator.train_every as u64 == 0 {
            self.train_discriminator()?;
        }
        Ok(())
    }

    /// Learned-reward phase of `steps` environment steps per agent.
    pub fn interact(&mut self, steps: usize) -> Result<()> {
        self.phase = Phase::Interact;
        for _ in 0..steps {
            for i in 0..self.agents.len() {
                self.collect(i, false)?;
                self.policy_update(i)?;
            }
            self.maybe_train_discriminator()?;
            self.tick();
        }
        Ok(())
    }

    /// Candidate episodes for the next session, as `(agent, span)`.
    pub fn candidate_pool(&self) -> Vec<(usize, EpisodeSpan)> {
        let k = self.config.recent_episodes;
        let uniform = self.sessions.is_empty() || matches!(self.config.algorithm, Algorithm::Pebble | Algorithm::Rune);
        let mut pool = Vec::new();
        for a in &self.agents {
            let spans = match self.config.algorithm {
                _ if uniform => a.buffer.episodes(),
                Algorithm::Pb2 => a.buffer.recent_episodes(k),
                _ if a.id == 0 => a.buffer.recent_episodes(k),
                _ => Vec::new(),
            };
            pool.extend(spans.into_iter().map(|s| (a.id, s)));
        }
        pool
    }

    fn extract_segment(&mut self, agent: usize, span: &EpisodeSpan) -> Result<Segment> {
        let len = self.config.segment_len.min(span.len);
        let offset = if span.len > len {
            self.query_rng.random_range(0..=span.len - len)
        } else {
            0
        };
        let buf = &self.agents[agent].buffer;
        let first = span.start + offset as u64;
        let mut states = Vec::with_capacity(len * buf.obs_dim());
        let mut actions = Vec::with_capacity(len * buf.act_dim());
        let mut gt = 0.0;
        let mut start_t = 0;
        for n in first..first + len as u64 {
            let t = buf.get(n).ok_or_else(|| Error::State("segment left the buffer".into()))?;
            if n == first {
                start_t = t.t;
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            gt += t.reward_gt;
        }
        let source = SegmentRef {
            agent_id: agent,
            episode: span.episode,
            start: start_t,
            len: len as u32,
        };
        Segment::new(source, buf.obs_dim(), buf.act_dim(), states, actions, gt)
    }

    /// Queries the teacher, retrains the reward model, relabels every
    /// buffer, then applies suspension, tracker flushes and inheritance.
    pub fn feedback_session(&mut self, teacher: &mut dyn Teacher) -> Result<SessionReport> {
        self.phase = Phase::Feedback;
        let iter = self.sessions.len() as u32;
        let want = self.config.queries_per_iter.min(self.config.feedback_budget - self.feedback_used.min(self.config.feedback_budget));
        let pool = self.candidate_pool();
        let mut agents_in_pool: Vec<usize> = pool.iter().map(|(a, _)| *a).collect();
        agents_in_pool.dedup();
        let mut segments = Vec::with_capacity(pool.len());
        for (agent, span) in &pool {
            segments.push(self.extract_segment(*agent, span)?);
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for i in 0..segments.len() {
            for j in i + 1..segments.len() {
                if segments[i].source != segments[j].source {
                    pairs.push((i, j));
                }
            }
        }
        pairs.shuffle(&mut self.query_rng);
        let mut answered = 0;
        let mut skipped = 0;
        for (i, j) in pairs {
            if answered >= want {
                break;
            }
            match teacher.label(&segments[i], &segments[j])? {
                Some(label) => {
                    for s in [&segments[i], &segments[j]] {
                        let key = (s.source.agent_id, s.source.episode);
                        if !self.queried.contains_key(&key) {
                            let (a, span) = pool
                                .iter()
                                .find(|(a, sp)| *a == key.0 && sp.episode == key.1)
                                .expect("segment comes from the pool");
                            let traj = self.agents[*a].trajectory(span);
                            self.queried.insert(key, traj);
                        }
                    }
                    self.preferences.push(PreferenceRecord {
                        iter,
                        teacher: teacher.tag(),
                        seg0: segments[i].clone(),
                        seg1: segments[j].clone(),
                        label,
                    });
                    answered += 1;
                }
                None => skipped += 1,
            }
        }
        self.feedback_used += answered;

        let mut report = SessionReport {
            iter,
            answered,
            skipped,
            pool_agents: agents_in_pool.len(),
            relabeled: 0,
            relabel_max_error: 0.0,
            reward_loss: f64::NAN,
        };
        if answered > 0 {
            let epochs = self.config.reward.epochs;
            let losses = self.reward.train(&self.preferences, epochs, &mut self.reward_rng)?;
            report.reward_loss = losses.last().copied().unwrap_or(f64::NAN);
            report.relabeled = self.relabel_all()?;
            report.relabel_max_error = self.relabel_audit(100)?;
            for a in &mut self.agents {
                a.tracker.flush();
                // The unfinished episode mixes rewards from two models.
                a.episode_learned = 0.0;
            }
            let s = self.config.effective_suspension();
            if self.config.uses_diversity() && s > 0 {
                self.suspension_left = s;
                self.suspension_windows.push((self.clock, s as u64));
            }
            if self.config.inherit && self.agents.len() > 1 {
                self.inherit()?;
            }
        }
        self.sessions.push(report.clone());
        Ok(report)
    }

    fn relabel_all(&mut self) -> Result<usize> {
        let reward = &self.reward;
        let mut total = 0;
        let mut failure = None;
        for a in &mut self.agents {
            total += a.buffer.relabel(|s, act, n| match reward.predict_batch(s, act, n) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    vec![0.0; n]
                }
            });
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }

    /// Largest `|stored - fresh|` learned reward over `samples` random
    /// transitions per agent.
    pub fn relabel_audit(&mut self, samples: usize) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for a in &self.agents {
            let range = a.buffer.stored();
            if range.is_empty() {
                continue;
            }
            for _ in 0..samples {
                let n = self.audit_rng.random_range(range.clone());
                let fresh = self.reward.predict(a.buffer.state(n), a.buffer.action(n))?;
                worst = worst.max((fresh - a.buffer.reward_learned(n)).abs() as f64);
            }
        }
        Ok(worst)
    }

    /// Copies the reference agent's actor and critics into every other agent.
    pub fn inherit(&mut self) -> Result<()> {
        let (reference, rest) = self.agents.split_at_mut(1);
        for a in rest {
            a.sac.copy_networks_from(&reference[0].sac)?;
        }
        Ok(())
    }

    /// Mean-mode rollouts of the reference agent in a fresh environment.
    /// Never touches any buffer. Returns `(mean return, reached goal, last trajectory)`.
    pub fn evaluate(&mut self) -> Result<(f64, bool, Trajectory)> {
        let agent = &self.agents[0];
        let mut total = 0.0;
        let mut reached = false;
        let mut last = Trajectory {
            agent_id: 0,
            episode: 0,
            steps: Vec::new(),
        };
        for ep in 0..self.config.eval_episodes {
            let mut state = self.env.reset(self.eval_rng.random());
            let mut steps = Vec::with_capacity(self.env.episode_len);
            loop {
                let obs = self.env.observe(&state);
                let action = agent.sac.act(&obs, ActMode::Mean, &mut self.eval_rng)?;
                let (next, r) = self.env.step(&state, [action[0] as f64, action[1] as f64])?;
                if let Some(m) = &self.env.maze {
                    reached |= m.at_goal(next.pos);
                }
                total += r;
                let done = self.env.is_last_step(&next);
                steps.push(Step {
                    t: state.t,
                    state: obs,
                    action,
                    next_state: self.env.observe(&next),
                    reward_gt: r,
                    reward_learned: 0.0,
                });
                state = next;
                if done {
                    break;
                }
            }
            last = Trajectory {
                agent_id: 0,
                episode: ep as u64,
                steps,
            };
        }
        Ok((total / self.config.eval_episodes as f64, reached, last))
    }

    /// Evaluates the reference agent and appends an evaluation point.
    pub fn record_point(&mut self) -> Result<EvalPoint> {
        let (ret, reached_goal, _) = self.evaluate()?;
        let p = EvalPoint {
            step: self.clock,
            feedback: self.feedback_used,
            ret,
            reached_goal,
        };
        self.points.push(p);
        Ok(p)
    }

    /// Pretraining followed by an evaluation at zero feedback.
    pub fn start(&mut self) -> Result<()> {
        self.pretrain()?;
        self.record_point().map(|_| ())
    }

    /// One feedback session, its interaction phase and an evaluation.
    pub fn step_session(&mut self, teacher: &mut dyn Teacher) -> Result<SessionReport> {
        let report = self.feedback_session(teacher)?;
        self.interact(self.config.interact_steps)?;
        self.record_point()?;
        Ok(report)
    }

    /// Full run against one teacher.
    pub fn run(&mut self, teacher: &mut dyn Teacher) -> Result<RunRecord> {
        self.run_observed(teacher, &mut |_| {})
    }

    /// Full run that calls `observe` whenever a phase begins and after
    /// every evaluation. Stops once the budget is spent or after three
    /// consecutive sessions without an answered query.
    pub fn run_observed(&mut self, teacher: &mut dyn Teacher, observe: &mut dyn FnMut(&Experiment)) -> Result<RunRecord> {
        self.phase = Phase::Pretrain;
        observe(self);
        self.start()?;
        observe(self);
        let mut idle = 0;
        while !self.budget_exhausted() {
            self.phase = Phase::Feedback;
            observe(self);
            let r = self.feedback_session(teacher)?;
            self.phase = Phase::Interact;
            observe(self);
            self.interact(self.config.interact_steps)?;
            self.record_point()?;
            observe(self);
            idle = if r.answered == 0 { idle + 1 } else { 0 };
            if idle >= 3 {
                break;
            }
        }
        self.phase = Phase::Done;
        observe(self);
        Ok(self.record())
    }

    pub fn record(&self) -> RunRecord {
        RunRecord {
            algorithm: self.config.algorithm,
            env: self.config.env,
            seed: self.seed,
            config_hash: 0,
            points: self.points.clone(),
            sessions: self.sessions.clone(),
            gate_audit: audit_gate_log(&self.gate_log, self.config.alpha),
            max_abs_diversity: self.max_abs_diversity,
            feedback_used: self.feedback_used,
        }
    }
}

/// Runs one seed with the simulated teacher described by the manifest.
pub fn run_experiment(config: &RunConfig, seed: u64) -> Result<RunRecord> {
    let mut exp = Experiment::new(config.clone(), seed)?;
    let mut teacher = crate::teacher::OracleTeacher::new(
        config.epsilon,
        config.strict_threshold,
        substream(seed, stream::TEACHER, 0),
    );
    exp.run(&mut teacher)
}
