//! Time Warp state machine for one LP.
//!
//! `lvt` is the next step to execute. A checkpoint keyed `c` holds the hosted
//! states as they were before step `c`. Every executed step leaves a record and
//! a log of the physical messages it sent; both are kept until GVT passes the
//! step.
//!
//! A straggler for step `s < lvt` rolls the LP back to `s`: restore the latest
//! checkpoint at or before `s`, re-execute up to `s` with sends suppressed
//! (execution is deterministic, so the suppressed sends equal the logged ones),
//! and cancel every logged send of steps `s` and later with anti-messages.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::behavior::Outgoing;
use crate::exec::{ExecError, LpExec, Snapshot};
use crate::ids::{SeId, VirtualTime};
use crate::message::{MessageKey, MsgKind, SimMessage};
use crate::sync::StepRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("no checkpoint at or before step {0}: fossil collection discarded too much")]
    MissingCheckpoint(u64),
    #[error("message for step {ts} arrived after GVT {gvt}")]
    BelowGvt { ts: u64, gvt: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TwCounters {
    pub rollbacks: u64,
    pub antimessages: u64,
    pub annihilated: u64,
    pub coasted_steps: u64,
    pub events: u64,
}

pub struct TimeWarp {
    exec: LpExec,
    horizon: u64,
    checkpoint_every: u64,
    lvt: u64,
    gvt: u64,
    inputs: BTreeMap<MessageKey, SimMessage>,
    pending_anti: HashSet<MessageKey>,
    checkpoints: BTreeMap<u64, Snapshot>,
    sent: BTreeMap<u64, Vec<SimMessage>>,
    log: BTreeMap<u64, StepRecord>,
    /// Rollbacks and anti-messages attributed to the step rolled back to.
    overhead: BTreeMap<u64, (u64, u64)>,
    counters: TwCounters,
}

impl TimeWarp {
    pub fn new(exec: LpExec, horizon: u64, checkpoint_every: u64) -> Self {
        let mut checkpoints = BTreeMap::new();
        checkpoints.insert(0, exec.snapshot());
        TimeWarp {
            exec,
            horizon,
            checkpoint_every: checkpoint_every.max(1),
            lvt: 0,
            gvt: 0,
            inputs: BTreeMap::new(),
            pending_anti: HashSet::new(),
            checkpoints,
            sent: BTreeMap::new(),
            log: BTreeMap::new(),
            overhead: BTreeMap::new(),
            counters: TwCounters::default(),
        }
    }

    pub fn lvt(&self) -> u64 {
        self.lvt
    }

    pub fn gvt(&self) -> u64 {
        self.gvt
    }

    pub fn counters(&self) -> TwCounters {
        self.counters
    }

    pub fn exec(&self) -> &LpExec {
        &self.exec
    }

    pub fn exec_mut(&mut self) -> &mut LpExec {
        &mut self.exec
    }

    pub fn checkpoint_steps(&self) -> Vec<u64> {
        self.checkpoints.keys().copied().collect()
    }

    pub fn pending_antis(&self) -> usize {
        self.pending_anti.len()
    }

    pub fn unprocessed(&self) -> usize {
        self.inputs.range(MessageKey::lowest(VirtualTime(self.lvt))..).count()
    }

    /// Applies an arriving model, broadcast or anti message. Anti-messages that
    /// the rollback produced are appended to `out`.
    pub fn receive(&mut self, msg: SimMessage, out: &mut Vec<SimMessage>) -> Result<(), TwError> {
        let key = msg.key();
        let ts = msg.recv_ts.0;
        if ts < self.gvt {
            return Err(TwError::BelowGvt { ts, gvt: self.gvt });
        }
        match msg.kind {
            MsgKind::Anti => {
                if self.inputs.remove(&key).is_some() {
                    self.counters.annihilated += 1;
                    if ts < self.lvt {
                        self.rollback(ts, out)?;
                    }
                } else {
                    // Overtook its positive counterpart.
                    self.pending_anti.insert(key);
                }
            }
            MsgKind::Model | MsgKind::Broadcast => {
                if self.pending_anti.remove(&key) {
                    self.counters.annihilated += 1;
                    return Ok(());
                }
                if ts < self.lvt {
                    self.rollback(ts, out)?;
                }
                self.inputs.insert(key, msg);
            }
            _ => {}
        }
        Ok(())
    }

    fn batch(&self, t: u64) -> Vec<SimMessage> {
        self.inputs
            .range(MessageKey::lowest(VirtualTime(t))..MessageKey::lowest(VirtualTime(t + 1)))
            .map(|(_, m)| m.clone())
            .collect()
    }

    /// Returns the LP to the state before step `to`.
    pub fn rollback(&mut self, to: u64, out: &mut Vec<SimMessage>) -> Result<(), TwError> {
        if to >= self.lvt {
            return Ok(());
        }
        let (&cp, snap) = self.checkpoints.range(..=to).next_back().ok_or(TwError::MissingCheckpoint(to))?;
        self.exec.restore(snap);
        self.checkpoints.retain(|c, _| *c <= to);
        for step in cp..to {
            let batch = self.batch(step);
            self.exec.execute_step(step, &batch)?;
            self.counters.coasted_steps += 1;
        }
        let mut antis = 0;
        for (_, msgs) in self.sent.split_off(&to) {
            for m in msgs {
                out.push(m.anti());
                antis += 1;
            }
        }
        self.log.split_off(&to);
        self.lvt = to;
        self.counters.rollbacks += 1;
        self.counters.antimessages += antis;
        let o = self.overhead.entry(to).or_default();
        o.0 += 1;
        o.1 += antis;
        Ok(())
    }

    /// True while `lvt` is within the run.
    pub fn can_execute(&self) -> bool {
        self.lvt <= self.horizon
    }

    /// Executes step `lvt`. `route` turns each model send into physical
    /// messages; all of them, including those for this LP, are appended to `out`.
    pub fn execute_next(
        &mut self,
        route: &mut dyn FnMut(Outgoing) -> Vec<SimMessage>,
        capture_positions: bool,
        out: &mut Vec<SimMessage>,
    ) -> Result<u64, TwError> {
        let t = self.lvt;
        let started = std::time::Instant::now();
        let positions = capture_positions.then(|| self.exec.positions());
        let batch = self.batch(t);
        let res = self.exec.execute_step(t, &batch)?;
        let mut sent = Vec::new();
        for o in res.outgoing {
            sent.extend(route(o));
        }
        out.extend(sent.iter().cloned());
        let events = res.deliveries.len() as u64;
        self.log.insert(
            t,
            StepRecord {
                step: t,
                hashes: self.exec.hashes(),
                deliveries: res.deliveries,
                positions,
                sent: sent.len() as u64,
                beyond_horizon: res.beyond_horizon,
                quarantined: res.quarantined,
                wall_us: started.elapsed().as_micros() as u64,
                ..Default::default()
            },
        );
        if !sent.is_empty() {
            self.sent.insert(t, sent);
        }
        self.lvt = t + 1;
        if self.lvt.is_multiple_of(self.checkpoint_every) {
            self.checkpoints.insert(self.lvt, self.exec.snapshot());
        }
        self.counters.events += events;
        Ok(events)
    }

    /// Commits every step below `gvt` and reclaims what no rollback can need.
    pub fn commit(&mut self, gvt: u64) -> Vec<StepRecord> {
        debug_assert!(gvt >= self.gvt);
        debug_assert!(gvt <= self.lvt, "GVT {gvt} beyond local time {}", self.lvt);
        self.gvt = gvt;
        let keep = self.log.split_off(&gvt);
        let done = std::mem::replace(&mut self.log, keep);
        let mut out: Vec<StepRecord> = done.into_values().collect();
        for r in &mut out {
            if let Some((rb, anti)) = self.overhead.remove(&r.step) {
                r.rollbacks = rb;
                r.antimessages = anti;
            }
        }
        self.fossil_collect(gvt);
        out
    }

    /// Keeps the latest checkpoint at or before `gvt` and everything after it.
    pub fn fossil_collect(&mut self, gvt: u64) {
        let cp = self.checkpoints.range(..=gvt).next_back().map(|(c, _)| *c).unwrap_or(gvt);
        self.checkpoints = self.checkpoints.split_off(&cp);
        self.sent = self.sent.split_off(&gvt);
        // Coasting forward from `cp` replays the inputs of steps `cp..`.
        self.inputs = self.inputs.split_off(&MessageKey::lowest(VirtualTime(cp)));
        self.overhead.retain(|s, _| *s >= gvt);
    }

    /// Restarts history at `t == lvt == gvt`, after the hosted set changed.
    pub fn rebase(&mut self, t: u64) {
        debug_assert!(t == self.lvt && t == self.gvt && self.log.is_empty());
        self.checkpoints.clear();
        self.checkpoints.insert(t, self.exec.snapshot());
        self.sent.clear();
        self.inputs = self.inputs.split_off(&MessageKey::lowest(VirtualTime(t)));
    }

    /// The executor and the input set, borrowed separately for a fence.
    pub fn split(&mut self) -> (&mut LpExec, InputsMut<'_>) {
        let inputs = InputsMut {
            inputs: &mut self.inputs,
            pending_anti: &mut self.pending_anti,
            annihilated: &mut self.counters.annihilated,
            lvt: self.lvt,
        };
        (&mut self.exec, inputs)
    }

    /// Removes pending inputs addressed to a departing copy.
    pub fn take_inputs_for(&mut self, se: SeId) -> Vec<SimMessage> {
        self.split().1.take_for(se)
    }

    /// Adds an input that arrived with a migrating copy.
    pub fn insert_input(&mut self, msg: SimMessage) -> Result<(), TwError> {
        self.split().1.insert(msg)
    }
}

/// Inputs of a Time Warp LP that is parked at `lvt`.
pub struct InputsMut<'a> {
    inputs: &'a mut BTreeMap<MessageKey, SimMessage>,
    pending_anti: &'a mut HashSet<MessageKey>,
    annihilated: &'a mut u64,
    lvt: u64,
}

impl InputsMut<'_> {
    /// Adds a message for step `lvt` or later; the LP is not executing, so
    /// nothing may arrive for an earlier step.
    pub fn insert(&mut self, msg: SimMessage) -> Result<(), TwError> {
        if msg.recv_ts.0 < self.lvt {
            return Err(TwError::BelowGvt { ts: msg.recv_ts.0, gvt: self.lvt });
        }
        let key = msg.key();
        match msg.kind {
            MsgKind::Anti => {
                if self.inputs.remove(&key).is_some() {
                    *self.annihilated += 1;
                } else {
                    self.pending_anti.insert(key);
                }
            }
            MsgKind::Model | MsgKind::Broadcast => {
                if self.pending_anti.remove(&key) {
                    *self.annihilated += 1;
                } else {
                    self.inputs.insert(key, msg);
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn take_for(&mut self, se: SeId) -> Vec<SimMessage> {
        let keys: Vec<MessageKey> = self
            .inputs
            .range(MessageKey::lowest(VirtualTime(self.lvt))..)
            .filter(|(k, m)| m.kind == MsgKind::Model && k.dst == se)
            .map(|(k, _)| *k)
            .collect();
        keys.into_iter().filter_map(|k| self.inputs.remove(&k)).collect()
    }

    pub fn clone_for(&self, se: SeId) -> Vec<SimMessage> {
        self.inputs
            .range(MessageKey::lowest(VirtualTime(self.lvt))..)
            .map(|(_, m)| m)
            .filter(|m| m.kind == MsgKind::Model && m.dst == se)
            .cloned()
            .collect()
    }
}
