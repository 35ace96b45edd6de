//! End-of-step barrier bookkeeping for the time-stepped protocol.
//!
//! Every LP announces `EndOfStep(t)` to every peer after flushing the sends of
//! step `t`; it may start `t + 1` once it holds the announcement of every live
//! peer. There is no coordinator.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::LpId;

#[derive(Debug, Clone)]
pub struct StepBarrier {
    peers: BTreeSet<LpId>,
    arrived: BTreeMap<u64, BTreeSet<LpId>>,
}

impl StepBarrier {
    pub fn new(peers: impl IntoIterator<Item = LpId>) -> Self {
        StepBarrier { peers: peers.into_iter().collect(), arrived: BTreeMap::new() }
    }

    pub fn arrive(&mut self, from: LpId, step: u64) {
        self.arrived.entry(step).or_default().insert(from);
    }

    /// Drops a failed peer; the barrier no longer waits for it.
    pub fn remove_peer(&mut self, lp: LpId) {
        self.peers.remove(&lp);
    }

    pub fn peers(&self) -> &BTreeSet<LpId> {
        &self.peers
    }

    /// Peers whose announcement for `step` is still missing.
    pub fn missing(&self, step: u64) -> Vec<LpId> {
        let got = self.arrived.get(&step);
        self.peers.iter().filter(|p| !got.is_some_and(|g| g.contains(p))).copied().collect()
    }

    pub fn complete(&self, step: u64) -> bool {
        self.missing(step).is_empty()
    }

    /// Releases `step`; returns the next step.
    pub fn release(&mut self, step: u64) -> u64 {
        self.arrived.retain(|s, _| *s > step);
        step + 1
    }
}
