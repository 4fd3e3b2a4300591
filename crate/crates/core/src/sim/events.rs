//! Deterministic event queue ordered by (time, kind priority, sequence).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::{HostId, JobId};

pub type RunId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckPurpose {
    /// Feature capture for training-data harvesting.
    Observe,
    /// A wake-up requested by the mitigation policy.
    Wake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    TaskComplete { run: RunId, epoch: u64 },
    HostFault { host: HostId },
    HostRecover { host: HostId },
    TaskFault { run: RunId, epoch: u64 },
    VmCreationFault { host: HostId },
    JobArrival { job: JobId },
    IntervalBoundary { index: u64 },
    MitigationCheck { job: JobId, purpose: CheckPurpose },
}

impl EventKind {
    /// Lower fires first among events at the same time.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::TaskComplete { .. } => 0,
            EventKind::HostFault { .. } => 1,
            EventKind::HostRecover { .. } => 2,
            EventKind::TaskFault { .. } => 3,
            EventKind::VmCreationFault { .. } => 4,
            EventKind::JobArrival { .. } => 5,
            EventKind::IntervalBoundary { .. } => 6,
            EventKind::MitigationCheck { .. } => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub seq: u64,
}

impl SimEvent {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
    last_popped: Option<(f64, u8, u64)>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind) {
        debug_assert!(time.is_finite(), "event time {time} for {kind:?}");
        self.heap.push(SimEvent {
            time,
            kind,
            seq: self.next_seq,
        });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        let ev = self.heap.pop()?;
        let key = (ev.time, ev.kind.priority(), ev.seq);
        if let Some(last) = self.last_popped {
            // same-time events pushed after the previous pop may carry a lower priority
            debug_assert!(
                last.0 < key.0 || (last.0 == key.0 && ((last.1, last.2) < (key.1, key.2) || key.2 > last.2)),
                "event queue out of order: {last:?} then {key:?}"
            );
        }
        self.last_popped = Some(key);
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_time_orders_by_priority_then_insertion() {
        let mut q = EventQueue::new();
        q.push(5.0, EventKind::IntervalBoundary { index: 1 });
        q.push(5.0, EventKind::JobArrival { job: JobId(1) });
        q.push(5.0, EventKind::JobArrival { job: JobId(2) });
        q.push(5.0, EventKind::TaskComplete { run: 0, epoch: 0 });
        q.push(1.0, EventKind::HostFault { host: HostId(0) });
        let kinds: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                EventKind::HostFault { host: HostId(0) },
                EventKind::TaskComplete { run: 0, epoch: 0 },
                EventKind::JobArrival { job: JobId(1) },
                EventKind::JobArrival { job: JobId(2) },
                EventKind::IntervalBoundary { index: 1 },
            ]
        );
    }

    proptest! {
        #[test]
        fn pops_in_nondecreasing_key_order(times in prop::collection::vec((0u32..50, 0u8..8), 1..200)) {
            let mut q = EventQueue::new();
            for (t, p) in &times {
                let kind = match p {
                    0 => EventKind::TaskComplete { run: 0, epoch: 0 },
                    1 => EventKind::HostFault { host: HostId(0) },
                    2 => EventKind::HostRecover { host: HostId(0) },
                    3 => EventKind::TaskFault { run: 0, epoch: 0 },
                    4 => EventKind::VmCreationFault { host: HostId(0) },
                    5 => EventKind::JobArrival { job: JobId(0) },
                    6 => EventKind::IntervalBoundary { index: 0 },
                    _ => EventKind::MitigationCheck { job: JobId(0), purpose: CheckPurpose::Wake },
                };
                q.push(*t as f64, kind);
            }
            let mut prev: Option<(f64, u8, u64)> = None;
            while let Some(e) = q.pop() {
                let key = (e.time, e.kind.priority(), e.seq);
                if let Some(p) = prev {
                    prop_assert!(p.0 < key.0 || (p.0 == key.0 && (p.1, p.2) < (key.1, key.2)));
                }
                prev = Some(key);
            }
        }
    }
}
