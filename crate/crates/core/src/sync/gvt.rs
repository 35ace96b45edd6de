//! Stop-the-world GVT rounds.
//!
//! Round `r` has two phases, both all-to-all:
//!
//! 1. `Marker(r)`. An LP entering the round sends its marker to every peer and
//!    stops executing events. Channels are FIFO, so once it holds every peer's
//!    marker, everything sent before the round has arrived. Stragglers and
//!    anti-messages received meanwhile are still applied; whatever they cause
//!    is timestamped at or after the resulting local virtual time.
//! 2. `Value(r, lvt)`. Each LP then reports its local virtual time, and every LP
//!    takes the same minimum.
//!
//! Any LP may open a round; opening one that is already open is a no-op.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::LpId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GvtMsg {
    Marker { round: u64 },
    Value { round: u64, lvt: u64 },
}

#[derive(Debug, Clone)]
pub struct GvtTracker {
    peers: BTreeSet<LpId>,
    /// Next round to open, or the one in progress.
    round: u64,
    active: bool,
    value_sent: Option<u64>,
    markers: BTreeMap<u64, BTreeSet<LpId>>,
    values: BTreeMap<u64, BTreeMap<LpId, u64>>,
    gvt: u64,
    rounds_done: u64,
}

impl GvtTracker {
    pub fn new(peers: impl IntoIterator<Item = LpId>) -> Self {
        GvtTracker {
            peers: peers.into_iter().collect(),
            round: 0,
            active: false,
            value_sent: None,
            markers: BTreeMap::new(),
            values: BTreeMap::new(),
            gvt: 0,
            rounds_done: 0,
        }
    }

    pub fn gvt(&self) -> u64 {
        self.gvt
    }

    pub fn in_round(&self) -> bool {
        self.active
    }

    pub fn rounds_done(&self) -> u64 {
        self.rounds_done
    }

    fn open(&mut self) -> Vec<(LpId, GvtMsg)> {
        if self.active {
            return Vec::new();
        }
        self.active = true;
        self.value_sent = None;
        self.peers.iter().map(|p| (*p, GvtMsg::Marker { round: self.round })).collect()
    }

    /// Opens the next round; returns the messages to send.
    pub fn start(&mut self) -> Vec<(LpId, GvtMsg)> {
        self.open()
    }

    /// Joins the current round if a peer already opened it (its marker arrived
    /// while the previous round was still finishing).
    pub fn poll_open(&mut self) -> Vec<(LpId, GvtMsg)> {
        if !self.active && self.markers.get(&self.round).is_some_and(|m| !m.is_empty()) {
            return self.open();
        }
        Vec::new()
    }

    /// Handles a peer's round message; returns any messages to send.
    pub fn on_message(&mut self, from: LpId, msg: GvtMsg) -> Vec<(LpId, GvtMsg)> {
        match msg {
            GvtMsg::Marker { round } => {
                self.markers.entry(round).or_default().insert(from);
                if round == self.round {
                    return self.open();
                }
                Vec::new()
            }
            GvtMsg::Value { round, lvt } => {
                self.values.entry(round).or_default().insert(from, lvt);
                Vec::new()
            }
        }
    }

    /// True once the round is drained and this LP should report its bound.
    pub fn wants_value(&self) -> bool {
        self.active
            && self.value_sent.is_none()
            && self.peers.iter().all(|p| self.markers.get(&self.round).is_some_and(|m| m.contains(p)))
    }

    pub fn send_value(&mut self, lvt: u64) -> Vec<(LpId, GvtMsg)> {
        debug_assert!(self.wants_value());
        self.value_sent = Some(lvt);
        self.peers.iter().map(|p| (*p, GvtMsg::Value { round: self.round, lvt })).collect()
    }

    /// Completes the round once every value is in; returns the new GVT.
    pub fn finish(&mut self) -> Option<u64> {
        let own = self.value_sent?;
        let got = self.values.get(&self.round);
        if !self.peers.iter().all(|p| got.is_some_and(|g| g.contains_key(p))) {
            return None;
        }
        let min = got.map(|g| g.values().copied().min().unwrap_or(own)).unwrap_or(own).min(own);
        self.markers.remove(&self.round);
        self.values.remove(&self.round);
        self.round += 1;
        self.active = false;
        self.value_sent = None;
        self.rounds_done += 1;
        debug_assert!(min >= self.gvt, "GVT regressed from {} to {}", self.gvt, min);
        self.gvt = self.gvt.max(min);
        Some(self.gvt)
    }
}
