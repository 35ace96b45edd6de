//! Sliding-window interaction accounting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ids::{LpId, SeId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Slot {
    step: u64,
    local: u32,
    remote: Vec<u32>,
}

/// Interaction counts of one copy over the last `W` steps, partitioned by the
/// LP of the other endpoint. Slots are indexed by delivery step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommWindow {
    slots: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WindowTotals {
    pub local: u64,
    /// Indexed by LP.
    pub remote: Vec<u64>,
}

impl WindowTotals {
    pub fn total(&self) -> u64 {
        self.local + self.remote.iter().sum::<u64>()
    }
}

const EMPTY: u64 = u64::MAX;

impl CommWindow {
    pub fn new(window: usize, lps: usize) -> Self {
        CommWindow { slots: vec![Slot { step: EMPTY, local: 0, remote: vec![0; lps] }; window.max(1)] }
    }

    pub fn window(&self) -> usize {
        self.slots.len()
    }

    fn slot(&mut self, step: u64) -> &mut Slot {
        let w = self.slots.len();
        let s = &mut self.slots[(step % w as u64) as usize];
        if s.step != step {
            s.step = step;
            s.local = 0;
            s.remote.iter_mut().for_each(|c| *c = 0);
        }
        s
    }

    /// One interaction at `step` with an endpoint on `partner`; `local` when both
    /// endpoints were on the same LP.
    pub fn record(&mut self, step: u64, partner: LpId, local: bool) {
        self.record_n(step, partner, local, 1);
    }

    pub fn record_n(&mut self, step: u64, partner: LpId, local: bool, n: u32) {
        let s = self.slot(step);
        if local {
            s.local += n;
        } else {
            s.remote[partner.index()] += n;
        }
    }

    fn live(&self, now: u64) -> impl Iterator<Item = &Slot> {
        let w = self.slots.len() as u64;
        self.slots.iter().filter(move |s| s.step != EMPTY && s.step < now && s.step + w >= now)
    }

    /// Counts over steps `[now - W, now)`.
    pub fn totals(&self, now: u64) -> WindowTotals {
        let lps = self.slots[0].remote.len();
        let mut t = WindowTotals { local: 0, remote: vec![0; lps] };
        for s in self.live(now) {
            t.local += s.local as u64;
            for (acc, c) in t.remote.iter_mut().zip(&s.remote) {
                *acc += *c as u64;
            }
        }
        t
    }

    /// Steps currently covered: `min(W, now)`.
    pub fn span(&self, now: u64) -> usize {
        (self.slots.len() as u64).min(now) as usize
    }
}

/// Windows of every copy an LP hosts.
#[derive(Debug, Clone, Default)]
pub struct CommMatrix {
    window: usize,
    lps: usize,
    windows: HashMap<SeId, CommWindow>,
}

impl CommMatrix {
    pub fn new(window: usize, lps: usize) -> Self {
        CommMatrix { window, lps, windows: HashMap::new() }
    }

    pub fn record(&mut self, se: SeId, step: u64, partner: LpId, local: bool) {
        self.record_n(se, step, partner, local, 1);
    }

    pub fn record_n(&mut self, se: SeId, step: u64, partner: LpId, local: bool, n: u32) {
        let (w, lps) = (self.window, self.lps);
        self.windows.entry(se).or_insert_with(|| CommWindow::new(w, lps)).record_n(step, partner, local, n);
    }

    pub fn get(&self, se: SeId) -> Option<&CommWindow> {
        self.windows.get(&se)
    }

    pub fn totals(&self, se: SeId, now: u64) -> WindowTotals {
        self.windows.get(&se).map(|w| w.totals(now)).unwrap_or(WindowTotals { local: 0, remote: vec![0; self.lps] })
    }

    /// Detaches a window so it can travel with a migrating copy.
    pub fn take(&mut self, se: SeId) -> Option<CommWindow> {
        self.windows.remove(&se)
    }

    pub fn insert(&mut self, se: SeId, w: CommWindow) {
        self.windows.insert(se, w);
    }
}
