//! Event log records and the time-ordered queue behind the simulator.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::ClientId;

/// One processed event, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub seq: u64,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Dispatch {
        invocation: u64,
        client: ClientId,
        round: u64,
        cold: bool,
    },
    Completion {
        invocation: u64,
        client: ClientId,
        round: u64,
        duration: f64,
    },
    Miss {
        invocation: u64,
        client: ClientId,
        round: u64,
    },
    /// The controller closed `round`, aggregating the listed invocations
    /// (possibly none). `loss` is the global loss afterwards.
    AggregationCheck {
        round: u64,
        included: Vec<u64>,
        loss: f64,
    },
    RoundTimeout {
        round: u64,
    },
}

impl SimEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

/// Min-queue on `(time, insertion order)`.
#[derive(Debug)]
pub(crate) struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    next_seq: u64,
}

#[derive(Debug)]
struct Entry<T> {
    time: f64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // Reversed so the max-heap pops the earliest entry.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn push(&mut self, time: f64, item: T) {
        debug_assert!(time.is_finite());
        self.heap.push(Entry {
            time,
            seq: self.next_seq,
            item,
        });
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, T)> {
        self.heap.pop().map(|e| (e.time, e.item))
    }

    #[cfg(test)]
    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_by_time_then_fifo() {
        let mut q = EventQueue::new();
        q.push(2.0, "c");
        q.push(1.0, "a");
        q.push(2.0, "d");
        q.push(1.0, "b");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|(_, x)| x).collect();
        assert_eq!(order, vec!["a", "b", "c", "d"]);
        assert!(q.is_empty());
    }

    #[test]
    fn json_line_round_trip() {
        let events = vec![
            SimEvent {
                seq: 0,
                time: 0.0,
                kind: EventKind::Dispatch {
                    invocation: 0,
                    client: ClientId(3),
                    round: 1,
                    cold: true,
                },
            },
            SimEvent {
                seq: 1,
                time: 12.5,
                kind: EventKind::Completion {
                    invocation: 0,
                    client: ClientId(3),
                    round: 1,
                    duration: 12.5,
                },
            },
            SimEvent {
                seq: 2,
                time: 12.5,
                kind: EventKind::AggregationCheck {
                    round: 1,
                    included: vec![0],
                    loss: 0.25,
                },
            },
        ];
        for e in events {
            let line = e.to_json_line();
            assert!(!line.contains('\n'));
            let back: SimEvent = serde_json::from_str(&line).unwrap();
            assert_eq!(back, e);
        }
    }
}
