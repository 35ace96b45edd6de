//! Conservative driver: a step runs once every upstream channel is bounded past
//! it. Null messages go out on demand, right before the LP blocks.
//!
//! Outputs are held back until their receive time is within the LP's promise
//! (`clock + lookahead`), which keeps every channel non-decreasing even when a
//! model uses delays larger than the lookahead.

use std::collections::BTreeMap;
use std::time::Instant;

use super::core::{LpCore, PendingStore};
use super::report::LpCounters;
use super::RunError;
use crate::exec::LpExec;
use crate::ids::{LpId, SeId, VirtualTime};
use crate::message::{MsgKind, SimMessage};
use crate::sync::cmb::InboundQueueSet;
use crate::sync::StepRecord;

struct Inputs {
    queues: InboundQueueSet,
    /// Messages this LP sent to itself, and inputs that came with migrants.
    local: BTreeMap<u64, Vec<SimMessage>>,
}

impl PendingStore for Inputs {
    fn absorb(&mut self, msgs: Vec<SimMessage>) -> Result<(), RunError> {
        for m in msgs {
            self.queues.push(m.src_lp, m)?;
        }
        Ok(())
    }

    fn take_for(&mut self, se: SeId) -> Vec<SimMessage> {
        let mut out = self.queues.take_for(se);
        for msgs in self.local.values_mut() {
            let (take, keep): (Vec<_>, Vec<_>) = msgs.drain(..).partition(|m| m.kind == MsgKind::Model && m.dst == se);
            *msgs = keep;
            out.extend(take);
        }
        out
    }

    fn clone_for(&self, _se: SeId) -> Vec<SimMessage> {
        unreachable!("replication runs only under the time-stepped protocol")
    }

    fn insert(&mut self, msg: SimMessage) -> Result<(), RunError> {
        self.local.entry(msg.recv_ts.0).or_default().push(msg);
        Ok(())
    }
}

struct Outbox {
    downstream: Vec<LpId>,
    held: BTreeMap<(u64, u64), SimMessage>,
    seq: u64,
    promised: u64,
}

impl Outbox {
    fn hold(&mut self, m: SimMessage) {
        self.held.insert((m.recv_ts.0, self.seq), m);
        self.seq += 1;
    }

    /// Sends held messages with receive time up to `limit`, re-resolving their
    /// destination LP in case the copy moved since the send.
    fn release(&mut self, core: &mut LpCore, inputs: &mut Inputs, limit: u64) -> Result<(), RunError> {
        while let Some(entry) = self.held.first_entry() {
            if entry.key().0 > limit {
                break;
            }
            let mut m = entry.remove();
            if m.kind == MsgKind::Model {
                if let Some(lp) = core.map.owner(m.dst) {
                    m.dst_lp = lp;
                }
            }
            if m.dst_lp == core.lp {
                inputs.insert(m)?;
            } else {
                core.send(m)?;
            }
        }
        Ok(())
    }

    fn promise(&mut self, core: &mut LpCore, inputs: &mut Inputs, clock: u64, la: u64) -> Result<(), RunError> {
        let p = clock + la;
        self.release(core, inputs, p)?;
        if p > self.promised {
            self.promised = p;
            for d in self.downstream.clone() {
                core.send(SimMessage::null(core.lp, d, VirtualTime(clock), VirtualTime(p)))?;
                core.counters.nulls += 1;
                core.unreported_nulls += 1;
            }
        }
        Ok(())
    }
}

pub(crate) fn run(mut core: LpCore, mut exec: LpExec) -> Result<(), RunError> {
    let horizon = core.cfg.horizon;
    let la = core.cfg.sync.lookahead.max(1);
    let topo = core.cfg.sync.topology;
    let me = core.lp.index();
    let upstream = topo.upstream(me, core.lps).into_iter().map(|i| LpId(i as u32));
    let downstream: Vec<LpId> = topo.downstream(me, core.lps).into_iter().map(|i| LpId(i as u32)).collect();
    let mut inputs = Inputs { queues: InboundQueueSet::new(upstream), local: BTreeMap::new() };
    let mut outbox = Outbox { downstream: downstream.clone(), held: BTreeMap::new(), seq: 0, promised: 0 };
    let mut clock = 0;
    let mut fenced = None;

    while clock <= horizon {
        inputs.absorb(core.data.drain(..).collect())?;
        if core.crash_due(clock) {
            core.crash(clock);
            return Ok(());
        }
        if core.cfg.gaia.is_fence(clock, horizon) && fenced != Some(clock) {
            outbox.promise(&mut core, &mut inputs, clock, la)?;
            core.fence(clock, &mut exec, &mut inputs)?;
            fenced = Some(clock);
            continue;
        }
        if !inputs.queues.step_ready(clock) {
            outbox.promise(&mut core, &mut inputs, clock, la)?;
            core.pump(None)?;
            continue;
        }

        let started = Instant::now();
        let positions = core.snapshot_due(clock).then(|| exec.positions());
        let mut batch = inputs.local.remove(&clock).unwrap_or_default();
        inputs.queues.drain_step(clock, &mut batch);
        let res = exec.execute_step(clock, &batch)?;
        let mut sent = 0;
        for o in res.outgoing {
            for m in core.route(o) {
                sent += 1;
                if m.dst_lp == core.lp {
                    inputs.insert(m)?;
                } else if downstream.contains(&m.dst_lp) {
                    outbox.hold(m);
                } else {
                    return Err(RunError::Topology { lp: core.lp, to: m.dst_lp });
                }
            }
        }
        core.faults.throttle(core.lp, started.elapsed());
        let step = clock;
        clock += 1;
        if clock > horizon {
            // Downstream LPs still need a bound past the horizon.
            outbox.promise(&mut core, &mut inputs, clock, la)?;
        } else {
            outbox.release(&mut core, &mut inputs, clock + la)?;
        }
        core.commit(StepRecord {
            step,
            hashes: exec.hashes(),
            deliveries: res.deliveries,
            positions,
            sent,
            beyond_horizon: res.beyond_horizon,
            quarantined: res.quarantined,
            wall_us: started.elapsed().as_micros() as u64,
            ..Default::default()
        })?;
    }
    core.finish(LpCounters::default())
}
