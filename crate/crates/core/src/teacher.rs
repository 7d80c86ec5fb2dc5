//! Preference label sources.
//!
//! [`OracleTeacher`] simulates a noisy annotator from hidden ground-truth
//! returns. [`TicketTable`] is the plain bookkeeping behind the human
//! teacher; the blocking adapter and HTTP service that drive it live in the
//! std crate.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rewardmodel::{Label, Segment, TeacherTag};

/// Anything that can answer a preference query. `None` means the query
/// was skipped and must not count against the feedback budget.
pub trait Teacher {
    fn tag(&self) -> TeacherTag;
    fn label(&mut self, seg0: &Segment, seg1: &Segment) -> Result<Option<Label>>;
}

/// How often each branch of the oracle fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub random: u64,
    pub decisive: u64,
    pub equal: u64,
}

/// Simulated annotator that answers at random when two segments' returns
/// are within a relative threshold `epsilon` of each other.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    pub epsilon: f64,
    /// Use `epsilon * max(R0, R1)` literally instead of the magnitude form
    /// `epsilon * max(|R0|, |R1|)`.
    pub strict_threshold: bool,
    rng: ChaCha8Rng,
    counts: LabelCounts,
}

impl OracleTeacher {
    pub fn new(epsilon: f64, strict_threshold: bool, rng: ChaCha8Rng) -> Self {
        Self {
            epsilon,
            strict_threshold,
            rng,
            counts: LabelCounts::default(),
        }
    }

    pub fn seeded(epsilon: f64, seed: u64) -> Self {
        Self::new(epsilon, false, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn counts(&self) -> LabelCounts {
        self.counts
    }

    /// The similarity threshold for a pair of returns.
    pub fn threshold(&self, r0: f64, r1: f64) -> f64 {
        if self.strict_threshold {
            self.epsilon * r0.max(r1)
        } else {
            self.epsilon * r0.abs().max(r1.abs())
        }
    }

    /// Whether the pair falls inside the random-answer region.
    pub fn is_ambiguous(&self, r0: f64, r1: f64) -> bool {
        (r1 - r0).abs() < self.threshold(r0, r1)
    }

    /// Label for a pair of ground-truth returns.
    pub fn label_returns(&mut self, r0: f64, r1: f64) -> Label {
        if self.is_ambiguous(r0, r1) {
            self.counts.random += 1;
            if self.rng.random_bool(0.5) {
                Label::First
            } else {
                Label::Second
            }
        } else if r1 > r0 {
            self.counts.decisive += 1;
            Label::Second
        } else if r0 > r1 {
            self.counts.decisive += 1;
            Label::First
        } else {
            self.counts.equal += 1;
            Label::Equal
        }
    }
}

impl Teacher for OracleTeacher {
    fn tag(&self) -> TeacherTag {
        TeacherTag::Oracle
    }

    fn label(&mut self, seg0: &Segment, seg1: &Segment) -> Result<Option<Label>> {
        Ok(Some(self.label_returns(seg0.gt_return(), seg1.gt_return())))
    }
}

/// Teacher that prefers whichever segment scores higher under `score`.
/// Used to script adversarial or synthetic feedback.
pub struct ScriptedTeacher<F> {
    score: F,
}

impl<F: FnMut(&Segment) -> f64> ScriptedTeacher<F> {
    pub fn new(score: F) -> Self {
        Self { score }
    }
}

impl<F: FnMut(&Segment) -> f64> Teacher for ScriptedTeacher<F> {
    fn tag(&self) -> TeacherTag {
        TeacherTag::Oracle
    }

    fn label(&mut self, seg0: &Segment, seg1: &Segment) -> Result<Option<Label>> {
        let (a, b) = ((self.score)(seg0), (self.score)(seg1));
        Ok(Some(if b > a {
            Label::Second
        } else if a > b {
            Label::First
        } else {
            Label::Equal
        }))
    }
}

/// Answers the first `count` labels with `first`, everything after with
/// `then`. Skipped queries do not count.
pub struct Handover<A, B> {
    first: A,
    then: B,
    remaining: usize,
}

impl<A: Teacher, B: Teacher> Handover<A, B> {
    pub fn new(first: A, count: usize, then: B) -> Self {
        Self {
            first,
            then,
            remaining: count,
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }
}

impl<A: Teacher, B: Teacher> Teacher for Handover<A, B> {
    fn tag(&self) -> TeacherTag {
        if self.remaining > 0 {
            self.first.tag()
        } else {
            self.then.tag()
        }
    }

    fn label(&mut self, seg0: &Segment, seg1: &Segment) -> Result<Option<Label>> {
        if self.remaining == 0 {
            return self.then.label(seg0, seg1);
        }
        let out = self.first.label(seg0, seg1)?;
        if out.is_some() {
            self.remaining -= 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TicketStatus {
    Pending,
    Answered,
    Expired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTicket {
    pub id: u64,
    pub seg0: Segment,
    pub seg1: Segment,
    /// Milliseconds on the caller's clock.
    pub created_ms: u64,
    pub status: TicketStatus,
    pub answer: Option<Label>,
    /// Set on the second attempt at an expired pair.
    pub requeued: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TicketError {
    #[error("unknown ticket {0}")]
    Unknown(u64),
    #[error("ticket {0} is no longer pending")]
    NotPending(u64),
}

/// Ticket bookkeeping with the only legal transitions
/// pending to answered and pending to expired.
#[derive(Debug, Clone, Default)]
pub struct TicketTable {
    next_id: u64,
    tickets: BTreeMap<u64, QueryTicket>,
}

impl TicketTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, seg0: Segment, seg1: Segment, now_ms: u64, requeued: bool) -> u64 {
        self.next_id += 1;
        let id = self.next_id;
        self.tickets.insert(
            id,
            QueryTicket {
                id,
                seg0,
                seg1,
                created_ms: now_ms,
                status: TicketStatus::Pending,
                answer: None,
                requeued,
            },
        );
        id
    }

    pub fn get(&self, id: u64) -> Option<&QueryTicket> {
        self.tickets.get(&id)
    }

    /// Oldest pending ticket.
    pub fn next_pending(&self) -> Option<&QueryTicket> {
        self.tickets.values().find(|t| t.status == TicketStatus::Pending)
    }

    pub fn pending_count(&self) -> usize {
        self.tickets.values().filter(|t| t.status == TicketStatus::Pending).count()
    }

    pub fn answer(&mut self, id: u64, label: Label) -> core::result::Result<(), TicketError> {
        let t = self.tickets.get_mut(&id).ok_or(TicketError::Unknown(id))?;
        if t.status != TicketStatus::Pending {
            return Err(TicketError::NotPending(id));
        }
        t.status = TicketStatus::Answered;
        t.answer = Some(label);
        Ok(())
    }

    pub fn expire(&mut self, id: u64) -> core::result::Result<(), TicketError> {
        let t = self.tickets.get_mut(&id).ok_or(TicketError::Unknown(id))?;
        if t.status != TicketStatus::Pending {
            return Err(TicketError::NotPending(id));
        }
        t.status = TicketStatus::Expired;
        Ok(())
    }

    pub fn tickets(&self) -> Vec<&QueryTicket> {
        self.tickets.values().collect()
    }
}
