//! Time-stepped driver: execute a step, flush, barrier, repeat.

use std::collections::BTreeMap;
use std::time::Instant;

use super::core::{LpCore, PendingStore};
use super::report::LpCounters;
use super::RunError;
use crate::exec::LpExec;
use crate::ids::SeId;
use crate::message::{MsgKind, SimMessage};
use crate::sync::StepRecord;

#[derive(Default)]
pub(crate) struct StepQueue {
    by_step: BTreeMap<u64, Vec<SimMessage>>,
}

impl StepQueue {
    pub fn push(&mut self, m: SimMessage) {
        self.by_step.entry(m.recv_ts.0).or_default().push(m);
    }

    pub fn take(&mut self, t: u64) -> Vec<SimMessage> {
        self.by_step.remove(&t).unwrap_or_default()
    }
}

impl PendingStore for StepQueue {
    fn absorb(&mut self, msgs: Vec<SimMessage>) -> Result<(), RunError> {
        msgs.into_iter().for_each(|m| self.push(m));
        Ok(())
    }

    fn take_for(&mut self, se: SeId) -> Vec<SimMessage> {
        let mut out = Vec::new();
        for msgs in self.by_step.values_mut() {
            let (take, keep) = msgs.drain(..).partition(|m| m.kind == MsgKind::Model && m.dst == se);
            *msgs = keep;
            out.extend::<Vec<_>>(take);
        }
        out
    }

    fn clone_for(&self, se: SeId) -> Vec<SimMessage> {
        self.by_step.values().flatten().filter(|m| m.kind == MsgKind::Model && m.dst == se).cloned().collect()
    }

    fn insert(&mut self, msg: SimMessage) -> Result<(), RunError> {
        self.push(msg);
        Ok(())
    }
}

pub(crate) fn run(mut core: LpCore, mut exec: LpExec) -> Result<(), RunError> {
    let horizon = core.cfg.horizon;
    let mut queue = StepQueue::default();
    for t in 0..=horizon {
        if core.crash_due(t) {
            core.crash(t);
            return Ok(());
        }
        if core.cfg.gaia.is_fence(t, horizon) {
            core.fence(t, &mut exec, &mut queue)?;
        }
        let started = Instant::now();
        let positions = core.snapshot_due(t).then(|| exec.positions());
        let batch = queue.take(t);
        let res = exec.execute_step(t, &batch)?;
        let mut sent = 0;
        for o in res.outgoing {
            for m in core.route(o) {
                sent += 1;
                if m.dst_lp == core.lp {
                    queue.push(m);
                } else {
                    core.send(m)?;
                }
            }
        }
        core.faults.throttle(core.lp, started.elapsed());
        let rec = StepRecord {
            step: t,
            hashes: exec.hashes(),
            deliveries: res.deliveries,
            positions,
            sent,
            beyond_horizon: res.beyond_horizon,
            quarantined: res.quarantined,
            wall_us: started.elapsed().as_micros() as u64,
            ..Default::default()
        };
        core.commit(rec)?;
        core.end_of_step(t)?;
        queue.absorb(core.data.drain(..).collect())?;
        core.recover(t, &mut exec, &mut queue)?;
    }
    let dedup = exec.dedup();
    let extra = LpCounters { duplicates: dedup.duplicates, ..Default::default() };
    core.finish(extra)
}
