use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// One stored environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub next_state: Vec<f32>,
    pub done: bool,
    pub reward_learned: f32,
    pub reward_diversity: f32,
    /// Hidden ground-truth reward; only the teacher and evaluation read it.
    pub reward_gt: f64,
    pub episode: u64,
    pub t: u32,
}

/// A contiguous run of transitions belonging to one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub episode: u64,
    /// Insertion number of the first transition.
    pub start: u64,
    pub len: usize,
    pub complete: bool,
}

/// Which stored reward fields feed the critic target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardSource {
    Learned,
    /// `learned + weight * diversity`.
    LearnedPlusDiversity { weight: f32 },
    GroundTruth,
}

/// Struct-of-arrays minibatch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub len: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub next_states: Vec<f32>,
    pub done: Vec<bool>,
    pub reward_learned: Vec<f32>,
    pub reward_diversity: Vec<f32>,
    pub reward_gt: Vec<f32>,
}

impl Batch {
    pub fn rewards(&self, source: RewardSource) -> Vec<f32> {
        match source {
            RewardSource::Learned => self.reward_learned.clone(),
            RewardSource::LearnedPlusDiversity { weight } => self
                .reward_learned
                .iter()
                .zip(&self.reward_diversity)
                .map(|(r, d)| r + weight * d)
                .collect(),
            RewardSource::GroundTruth => self.reward_gt.clone(),
        }
    }
}

/// Ring buffer of transitions with an episode recency index.
///
/// Insertion numbers grow without bound; the slot of insertion `n` is
/// `n % capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    inserted: u64,
    states: Vec<f32>,
    actions: Vec<f32>,
    next_states: Vec<f32>,
    done: Vec<bool>,
    reward_learned: Vec<f32>,
    reward_diversity: Vec<f32>,
    reward_gt: Vec<f64>,
    episode: Vec<u64>,
    t: Vec<u32>,
    episodes: VecDeque<EpisodeSpan>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            obs_dim,
            act_dim,
            capacity,
            inserted: 0,
            states: Vec::new(),
            actions: Vec::new(),
            next_states: Vec::new(),
            done: Vec::new(),
            reward_learned: Vec::new(),
            reward_diversity: Vec::new(),
            reward_gt: Vec::new(),
            episode: Vec::new(),
            t: Vec::new(),
            episodes: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        (self.inserted as usize).min(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.inserted == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Total number of insertions so far.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    fn oldest(&self) -> u64 {
        self.inserted - self.len() as u64
    }

    fn slot(&self, n: u64) -> usize {
        (n % self.capacity as u64) as usize
    }

    pub fn push(&mut self, tr: &Transition) -> Result<()> {
        if tr.state.len() != self.obs_dim || tr.next_state.len() != self.obs_dim || tr.action.len() != self.act_dim {
            return Err(Error::InputContract("transition dimensions do not match the buffer".into()));
        }
        let n = self.inserted;
        if (n as usize) < self.capacity {
            self.states.extend_from_slice(&tr.state);
            self.actions.extend_from_slice(&tr.action);
            self.next_states.extend_from_slice(&tr.next_state);
            self.done.push(tr.done);
            self.reward_learned.push(tr.reward_learned);
            self.reward_diversity.push(tr.reward_diversity);
            self.reward_gt.push(tr.reward_gt);
            self.episode.push(tr.episode);
            self.t.push(tr.t);
        } else {
            let i = self.slot(n);
            let (o, a) = (self.obs_dim, self.act_dim);
            self.states[i * o..(i + 1) * o].copy_from_slice(&tr.state);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&tr.action);
            self.next_states[i * o..(i + 1) * o].copy_from_slice(&tr.next_state);
            self.done[i] = tr.done;
            self.reward_learned[i] = tr.reward_learned;
            self.reward_diversity[i] = tr.reward_diversity;
            self.reward_gt[i] = tr.reward_gt;
            self.episode[i] = tr.episode;
            self.t[i] = tr.t;
        }
        self.inserted += 1;
        match self.episodes.back_mut() {
            Some(span) if span.episode == tr.episode && !span.complete => span.len += 1,
            _ => self.episodes.push_back(EpisodeSpan {
                episode: tr.episode,
                start: n,
                len: 1,
                complete: false,
            }),
        }
        let oldest = self.oldest();
        while self.episodes.front().is_some_and(|s| s.start < oldest) {
            self.episodes.pop_front();
        }
        Ok(())
    }

    /// Marks the current episode as finished.
    pub fn end_episode(&mut self) {
        if let Some(span) = self.episodes.back_mut() {
            span.complete = true;
        }
    }

    /// Transition at insertion number `n`, if still stored.
    pub fn get(&self, n: u64) -> Option<Transition> {
        if n < self.oldest() || n >= self.inserted {
            return None;
        }
        let i = self.slot(n);
        let (o, a) = (self.obs_dim, self.act_dim);
        Some(Transition {
            state: self.states[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            next_state: self.next_states[i * o..(i + 1) * o].to_vec(),
            done: self.done[i],
            reward_learned: self.reward_learned[i],
            reward_diversity: self.reward_diversity[i],
            reward_gt: self.reward_gt[i],
            episode: self.episode[i],
            t: self.t[i],
        })
    }

    pub fn state(&self, n: u64) -> &[f32] {
        let i = self.slot(n);
        &self.states[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn action(&self, n: u64) -> &[f32] {
        let i = self.slot(n);
        &self.actions[i * self.act_dim..(i + 1) * self.act_dim]
    }

    pub fn next_state(&self, n: u64) -> &[f32] {
        let i = self.slot(n);
        &self.next_states[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn reward_learned(&self, n: u64) -> f32 {
        self.reward_learned[self.slot(n)]
    }

    pub fn reward_gt(&self, n: u64) -> f64 {
        self.reward_gt[self.slot(n)]
    }

    /// Insertion numbers of every stored transition, oldest first.
    pub fn stored(&self) -> core::ops::Range<u64> {
        self.oldest()..self.inserted
    }

    pub fn reward_diversity(&self, n: u64) -> f32 {
        self.reward_diversity[self.slot(n)]
    }

    /// Insertion numbers of the `count` most recent transitions, oldest first.
    pub fn recent(&self, count: usize) -> core::ops::Range<u64> {
        let count = count.min(self.len()) as u64;
        self.inserted - count..self.inserted
    }

    /// Up to `k` most recent complete episodes, most recent first.
    pub fn recent_episodes(&self, k: usize) -> Vec<EpisodeSpan> {
        self.episodes.iter().rev().filter(|s| s.complete).take(k).copied().collect()
    }

    /// All complete episodes still stored, oldest first.
    pub fn episodes(&self) -> Vec<EpisodeSpan> {
        self.episodes.iter().filter(|s| s.complete).copied().collect()
    }

    fn gather(&self, idx: &[u64]) -> Batch {
        let mut b = Batch {
            len: idx.len(),
            ..Batch::default()
        };
        for &n in idx {
            let i = self.slot(n);
            b.states.extend_from_slice(&self.states[i * self.obs_dim..(i + 1) * self.obs_dim]);
            b.actions.extend_from_slice(&self.actions[i * self.act_dim..(i + 1) * self.act_dim]);
            b.next_states.extend_from_slice(&self.next_states[i * self.obs_dim..(i + 1) * self.obs_dim]);
            b.done.push(self.done[i]);
            b.reward_learned.push(self.reward_learned[i]);
            b.reward_diversity.push(self.reward_diversity[i]);
            b.reward_gt.push(self.reward_gt[i] as f32);
        }
        b
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::State("cannot sample from an empty buffer".into()));
        }
        let lo = self.oldest();
        let idx: Vec<u64> = (0..size).map(|_| rng.random_range(lo..self.inserted)).collect();
        Ok(self.gather(&idx))
    }

    /// Batch of the given insertion numbers.
    pub fn batch_of(&self, idx: &[u64]) -> Batch {
        self.gather(idx)
    }

    /// Rewrites every stored learned reward with `reward_fn(states, actions, count)`,
    /// evaluated in chunks. Returns the number of transitions relabeled.
    pub fn relabel<F>(&mut self, mut reward_fn: F) -> usize
    where
        F: FnMut(&[f32], &[f32], usize) -> Vec<f32>,
    {
        const CHUNK: usize = 1024;
        let len = self.len();
        let mut start = 0;
        while start < len {
            let end = (start + CHUNK).min(len);
            let rewards = reward_fn(
                &self.states[start * self.obs_dim..end * self.obs_dim],
                &self.actions[start * self.act_dim..end * self.act_dim],
                end - start,
            );
            self.reward_learned[start..end].copy_from_slice(&rewards);
            start = end;
        }
        len
    }
}
