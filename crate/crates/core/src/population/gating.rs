//! Performance gating, reward standardization and the gate audit log.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Variance below which the standardizer emits zero.
pub const MIN_VARIANCE: f64 = 1e-8;

/// Exponential moving mean and variance. The first sample initializes the
/// mean with zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaStandardizer {
    pub decay: f64,
    pub clip: f64,
    mean: f64,
    var: f64,
    seen: u64,
}

impl EmaStandardizer {
    pub fn new(decay: f64, clip: f64) -> Self {
        Self {
            decay,
            clip,
            mean: 0.0,
            var: 0.0,
            seen: 0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn update(&mut self, x: f64) {
        if self.seen == 0 {
            self.mean = x;
            self.var = 0.0;
        } else {
            let delta = x - self.mean;
            self.mean += (1.0 - self.decay) * delta;
            self.var = self.decay * (self.var + (1.0 - self.decay) * delta * delta);
        }
        self.seen += 1;
    }

    /// `(x - mean) / std` clipped to `[-clip, clip]`, or zero when the
    /// variance is degenerate.
    pub fn standardize(&self, x: f64) -> f64 {
        if self.var < MIN_VARIANCE {
            return 0.0;
        }
        ((x - self.mean) / self.var.sqrt()).clamp(-self.clip, self.clip)
    }
}

/// Running mean of the last `window` episode returns under the current
/// reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTracker {
    window: usize,
    returns: VecDeque<f64>,
}

impl PerformanceTracker {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            returns: VecDeque::new(),
        }
    }

    pub fn push(&mut self, ret: f64) {
        if self.returns.len() == self.window {
            self.returns.pop_front();
        }
        self.returns.push_back(ret);
    }

    /// Exact mean over the window, `None` when empty.
    pub fn mean(&self) -> Option<f64> {
        if self.returns.is_empty() {
            None
        } else {
            Some(self.returns.iter().sum::<f64>() / self.returns.len() as f64)
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn flush(&mut self) {
        self.returns.clear();
    }
}

/// `R_i >= R_ref - (1 - alpha) |R_ref|`, which equals `R_i >= alpha R_ref`
/// for non-negative `R_ref` and stays meaningful for negative returns.
pub fn passes_gate(r_i: f64, r_ref: f64, alpha: f64) -> bool {
    r_i >= r_ref - (1.0 - alpha) * Float::abs(r_ref)
}

/// One gated update decision for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub step: u64,
    pub agent: usize,
    pub tracker_mean: Option<f64>,
    pub reference_mean: Option<f64>,
    pub suspended: bool,
    pub applied: bool,
}

/// Violations found by [`audit_gate_log`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateAudit {
    pub events: usize,
    pub applied: usize,
    pub reference_applications: usize,
    pub suspended_applications: usize,
    pub threshold_violations: usize,
}

impl GateAudit {
    pub fn is_clean(&self) -> bool {
        self.reference_applications == 0 && self.suspended_applications == 0 && self.threshold_violations == 0
    }
}

/// Replays the gate log and counts applications that break the rules.
pub fn audit_gate_log(log: &[GateEvent], alpha: f64) -> GateAudit {
    let mut a = GateAudit {
        events: log.len(),
        ..GateAudit::default()
    };
    for e in log.iter().filter(|e| e.applied) {
        a.applied += 1;
        if e.agent == 0 {
            a.reference_applications += 1;
        }
        if e.suspended {
            a.suspended_applications += 1;
        }
        match (e.tracker_mean, e.reference_mean) {
            (Some(ri), Some(rr)) if passes_gate(ri, rr, alpha) => {}
            _ => a.threshold_violations += 1,
        }
    }
    a
}

/// Counts applied events inside `[start, start + len)` windows.
pub fn applications_in_windows(log: &[GateEvent], windows: &[(u64, u64)]) -> usize {
    log.iter()
        .filter(|e| e.applied && windows.iter().any(|&(s, len)| e.step >= s && e.step < s + len))
        .count()
}

/// Replay helper: standardizer state after feeding `stream`.
pub fn replay_standardizer(decay: f64, clip: f64, stream: &[f64]) -> EmaStandardizer {
    let mut s = EmaStandardizer::new(decay, clip);
    stream.iter().for_each(|&x| s.update(x));
    s
}

/// Convenience for tests: standardized, clipped values of a stream under
/// the state after each update.
pub fn standardized_stream(decay: f64, clip: f64, stream: &[f64]) -> Vec<f64> {
    let mut s = EmaStandardizer::new(decay, clip);
    stream
        .iter()
        .map(|&x| {
            s.update(x);
            s.standardize(x)
        })
        .collect()
}
