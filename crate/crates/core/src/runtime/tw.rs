//! Optimistic driver: execute ahead, roll back on stragglers, commit what GVT
//! passed. A migration fence parks the LP until GVT reaches the fence step.

use std::collections::VecDeque;
use std::time::Instant;

use super::control::Control;
use super::core::{LpCore, PendingStore};
use super::report::LpCounters;
use super::RunError;
use crate::exec::LpExec;
use crate::ids::{LpId, SeId};
use crate::message::SimMessage;
use crate::sync::gvt::{GvtMsg, GvtTracker};
use crate::sync::tw::{InputsMut, TimeWarp};

impl PendingStore for InputsMut<'_> {
    fn absorb(&mut self, msgs: Vec<SimMessage>) -> Result<(), RunError> {
        for m in msgs {
            self.insert(m)?;
        }
        Ok(())
    }

    fn take_for(&mut self, se: SeId) -> Vec<SimMessage> {
        InputsMut::take_for(self, se)
    }

    fn clone_for(&self, se: SeId) -> Vec<SimMessage> {
        InputsMut::clone_for(self, se)
    }

    fn insert(&mut self, msg: SimMessage) -> Result<(), RunError> {
        Ok(InputsMut::insert(self, msg)?)
    }
}

fn send_gvt(core: &mut LpCore, msgs: Vec<(LpId, GvtMsg)>) -> Result<(), RunError> {
    for (to, m) in msgs {
        core.send_control(to, &Control::Gvt(m))?;
    }
    Ok(())
}

/// Feeds buffered arrivals to the state machine. Anti-messages from rollbacks
/// go out right away; those for this LP are applied in turn.
fn drain(core: &mut LpCore, tw: &mut TimeWarp) -> Result<(), RunError> {
    let mut work: VecDeque<SimMessage> = core.data.drain(..).collect();
    let mut out = Vec::new();
    while let Some(m) = work.pop_front() {
        tw.receive(m, &mut out)?;
        for a in out.drain(..) {
            if a.dst_lp == core.lp {
                work.push_back(a);
            } else {
                core.send(a)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn run(mut core: LpCore, exec: LpExec) -> Result<(), RunError> {
    let horizon = core.cfg.horizon;
    let sync = core.cfg.sync;
    let mut tw = TimeWarp::new(exec, horizon, sync.checkpoint_every);
    let peers: Vec<LpId> = (0..core.lps as u32).map(LpId).filter(|p| *p != core.lp).collect();
    let mut gvt = GvtTracker::new(peers);
    let mut fenced = None;
    let mut since_round = 0u64;
    let mut idle_round = false;
    let parked_at = |core: &LpCore, t: u64, fenced: Option<u64>| {
        core.lps > 1 && core.cfg.gaia.is_fence(t, horizon) && fenced != Some(t)
    };

    loop {
        drain(&mut core, &mut tw)?;
        while let Some((from, m)) = core.gvt_in.pop_front() {
            let replies = gvt.on_message(from, m);
            send_gvt(&mut core, replies)?;
        }
        let opened = gvt.poll_open();
        send_gvt(&mut core, opened)?;

        if gvt.in_round() {
            if gvt.wants_value() {
                let v = gvt.send_value(tw.lvt());
                send_gvt(&mut core, v)?;
            }
            if let Some(g) = gvt.finish() {
                since_round = 0;
                for rec in tw.commit(g) {
                    core.commit(rec)?;
                }
                if g > horizon {
                    break;
                }
                if parked_at(&core, g, fenced) && tw.lvt() == g {
                    let (exec, mut inputs) = tw.split();
                    core.fence(g, exec, &mut inputs)?;
                    fenced = Some(g);
                    tw.rebase(g);
                    idle_round = false;
                }
                continue;
            }
            core.pump(None)?;
            continue;
        }

        let t = tw.lvt();
        if tw.can_execute() && !parked_at(&core, t, fenced) {
            if core.crash_due(t) {
                core.crash(t);
                return Ok(());
            }
            let started = Instant::now();
            let mut out = Vec::new();
            let capture = core.snapshot_due(t);
            let events = tw.execute_next(&mut |o| core.route(o), capture, &mut out)?;
            core.faults.throttle(core.lp, started.elapsed());
            let mut local = Vec::new();
            for m in out {
                if m.dst_lp == core.lp {
                    local.push(m);
                } else {
                    core.send(m)?;
                }
            }
            core.data.extend(local);
            idle_round = false;
            since_round += events.max(1);
            if since_round >= sync.gvt_every {
                let m = gvt.start();
                send_gvt(&mut core, m)?;
            }
            while core.pump(Some(Instant::now()))? {}
        } else if !idle_round {
            idle_round = true;
            let m = gvt.start();
            send_gvt(&mut core, m)?;
        } else {
            core.pump(None)?;
        }
    }

    let c = tw.counters();
    let extra = LpCounters {
        rollbacks: c.rollbacks,
        antimessages: c.antimessages,
        annihilated: c.annihilated,
        coasted_steps: c.coasted_steps,
        gvt_rounds: gvt.rounds_done(),
        duplicates: tw.exec().dedup().duplicates,
        ..Default::default()
    };
    core.finish(extra)
}
