//! Timestamped event queue with a strict (time, seq) order.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SlotBoundary,
    FrameTxStart,
    FrameRxComplete,
    Timer,
    MaintenanceTick,
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time_us: u64,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.time_us, self.seq) == (other.time_us, other.seq)
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for SimEvent<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time_us, self.seq).cmp(&(other.time_us, other.seq))
    }
}

/// Events at equal times pop in scheduling order.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<SimEvent<P>>>,
    next_seq: u64,
    now_us: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, now_us: 0 }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time_us: u64, kind: EventKind, payload: P) -> Result<u64> {
        if time_us < self.now_us {
            return Err(Error::Assertion(format!(
                "event {kind:?} scheduled at {time_us}us, before current time {}us",
                self.now_us
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { time_us, seq, kind, payload }));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.time_us)
    }

    pub fn pop(&mut self) -> Option<SimEvent<P>> {
        let Reverse(ev) = self.heap.pop()?;
        self.now_us = ev.time_us;
        Some(ev)
    }
}
