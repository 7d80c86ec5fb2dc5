//! Shared state between the trainer and the HTTP service, and the blocking
//! human teacher built on it.
//!
//! The trainer is the only producer of tickets and the service the only
//! consumer. Both sides go through [`Hub`], which guards the ticket table
//! with a mutex and wakes waiting trainers through a condition variable.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use pb2_core::envs::Trajectory;
use pb2_core::error::{Error, Result as CoreResult};
use pb2_core::population::{Phase, Progress};
use pb2_core::rewardmodel::{Label, Segment, TeacherTag};
use pb2_core::teacher::{Teacher, TicketError, TicketStatus, TicketTable};

use crate::formats::MetricRow;

#[derive(Debug)]
pub struct HubState {
    pub tickets: TicketTable,
    pub progress: Progress,
    /// Latest complete episode of every agent.
    pub recent: Vec<Trajectory>,
    pub metrics: Vec<MetricRow>,
    /// Whether an HTTP service is attached.
    pub serving: bool,
    /// Whether ground-truth rewards must be withheld from the API.
    pub human_mode: bool,
    pub skipped: usize,
}

#[derive(Debug)]
pub struct Hub {
    state: Mutex<HubState>,
    changed: Condvar,
    started: Instant,
}

impl Hub {
    pub fn new(human_mode: bool) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(HubState {
                tickets: TicketTable::new(),
                progress: Progress {
                    phase: Phase::Idle,
                    step: 0,
                    feedback_used: 0,
                    feedback_budget: 0,
                },
                recent: Vec::new(),
                metrics: Vec::new(),
                serving: false,
                human_mode,
                skipped: 0,
            }),
            changed: Condvar::new(),
            started: Instant::now(),
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, HubState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    pub fn enqueue(&self, seg0: Segment, seg1: Segment, requeued: bool) -> u64 {
        let now = self.now_ms();
        self.lock().tickets.enqueue(seg0, seg1, now, requeued)
    }

    pub fn answer(&self, id: u64, label: Label) -> Result<(), TicketError> {
        self.lock().tickets.answer(id, label)?;
        self.changed.notify_all();
        Ok(())
    }

    /// Blocks until ticket `id` is answered or `timeout` passes. A ticket
    /// still pending at the deadline is expired.
    pub fn await_label(&self, id: u64, timeout: Duration) -> Option<Label> {
        let deadline = Instant::now() + timeout;
        let mut state = self.lock();
        loop {
            match state.tickets.get(id) {
                Some(t) if t.status == TicketStatus::Answered => return t.answer,
                Some(t) if t.status == TicketStatus::Pending => {}
                _ => return None,
            }
            let now = Instant::now();
            if now >= deadline {
                let _ = state.tickets.expire(id);
                return None;
            }
            state = self
                .changed
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

/// Teacher that publishes every query as a ticket and waits for a person
/// to answer it through the HTTP API.
pub struct HumanTeacher {
    hub: Arc<Hub>,
    timeout: Duration,
}

impl HumanTeacher {
    pub fn new(hub: Arc<Hub>, timeout: Duration) -> Self {
        Self { hub, timeout }
    }
}

impl Teacher for HumanTeacher {
    fn tag(&self) -> TeacherTag {
        TeacherTag::Human
    }

    /// An expired query is published once more; a second expiry skips it.
    fn label(&mut self, seg0: &Segment, seg1: &Segment) -> CoreResult<Option<Label>> {
        if !self.hub.lock().serving {
            return Err(Error::Config(
                "the human teacher needs a running service".into(),
            ));
        }
        for requeued in [false, true] {
            let id = self.hub.enqueue(seg0.clone(), seg1.clone(), requeued);
            if let Some(label) = self.hub.await_label(id, self.timeout) {
                return Ok(Some(label));
            }
            log::warn!("query ticket {id} expired after {:?}", self.timeout);
        }
        self.hub.lock().skipped += 1;
        log::warn!(
            "skipping query {:?} vs {:?} after two expiries",
            seg0.source,
            seg1.source
        );
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pb2_core::rewardmodel::SegmentRef;
    use std::thread;

    fn seg(episode: u64) -> Segment {
        let source = SegmentRef {
            agent_id: 0,
            episode,
            start: 0,
            len: 2,
        };
        Segment::new(source, 2, 2, vec![0.0, 1.0, 2.0, 3.0], vec![0.0; 4], 0.0).unwrap()
    }

    #[test]
    fn posted_label_is_returned() {
        let hub = Hub::new(true);
        hub.lock().serving = true;
        let h = hub.clone();
        let answerer = thread::spawn(move || loop {
            let id = h.lock().tickets.next_pending().map(|t| t.id);
            if let Some(id) = id {
                h.answer(id, Label::Equal).unwrap();
                return;
            }
            thread::sleep(Duration::from_millis(2));
        });
        let mut t = HumanTeacher::new(hub.clone(), Duration::from_secs(10));
        assert_eq!(t.label(&seg(0), &seg(1)).unwrap(), Some(Label::Equal));
        answerer.join().unwrap();
    }

    #[test]
    fn unanswered_query_is_requeued_once_then_skipped() {
        let hub = Hub::new(true);
        hub.lock().serving = true;
        let mut t = HumanTeacher::new(hub.clone(), Duration::from_millis(20));
        assert_eq!(t.label(&seg(0), &seg(1)).unwrap(), None);
        let s = hub.lock();
        let tickets = s.tickets.tickets();
        assert_eq!(tickets.len(), 2);
        assert!(tickets.iter().all(|t| t.status == TicketStatus::Expired));
        assert!(!tickets[0].requeued && tickets[1].requeued);
        assert_eq!(s.skipped, 1);
    }

    #[test]
    fn out_of_order_answers_reach_their_own_waiters() {
        let hub = Hub::new(true);
        let a = hub.enqueue(seg(0), seg(1), false);
        let b = hub.enqueue(seg(2), seg(3), false);
        let (ha, hb) = (hub.clone(), hub.clone());
        let wa = thread::spawn(move || ha.await_label(a, Duration::from_secs(10)));
        let wb = thread::spawn(move || hb.await_label(b, Duration::from_secs(10)));
        thread::sleep(Duration::from_millis(20));
        hub.answer(b, Label::Second).unwrap();
        thread::sleep(Duration::from_millis(20));
        hub.answer(a, Label::First).unwrap();
        assert_eq!(wa.join().unwrap(), Some(Label::First));
        assert_eq!(wb.join().unwrap(), Some(Label::Second));
    }

    #[test]
    fn timeout_expires_ticket() {
        let hub = Hub::new(true);
        let id = hub.enqueue(seg(0), seg(1), false);
        assert_eq!(hub.await_label(id, Duration::from_millis(5)), None);
        assert_eq!(
            hub.lock().tickets.get(id).unwrap().status,
            TicketStatus::Expired
        );
        assert_eq!(
            hub.answer(id, Label::First),
            Err(TicketError::NotPending(id))
        );
    }

    #[test]
    fn requires_a_running_service() {
        let mut t = HumanTeacher::new(Hub::new(true), Duration::from_millis(5));
        assert!(matches!(t.label(&seg(0), &seg(1)), Err(Error::Config(_))));
    }
}
