//! Protocol-independent part of an LP driver: inbox dispatch, routing, commit
//! accounting, migration fences, crash recovery and shutdown.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::Sender;

use super::control::{now_us, Control, TransferItem};
use super::report::{LpCounters, Report, StepReport};
use super::{RunConfig, RunError};
use crate::behavior::{Outgoing, Target};
use crate::digest::EventFingerprint;
use crate::exec::LpExec;
use crate::ft::{ft_migration_filter, on_crash};
use crate::ids::{LpId, SeId, VirtualTime};
use crate::message::{MsgKind, SimMessage};
use crate::migration::{propose, reconcile_among, CommMatrix, MigrationRecord, MoveFilter, Proposal};
use crate::placement::OwnershipMap;
use crate::sync::gvt::GvtMsg;
use crate::sync::StepRecord;
use crate::transport::{Endpoint, Faults, Inbound, TransportError};

/// Where a protocol keeps inputs that arrived for future steps.
pub(crate) trait PendingStore {
    /// Takes over messages buffered in the core while it waited.
    fn absorb(&mut self, msgs: Vec<SimMessage>) -> Result<(), RunError>;
    /// Removes pending inputs for a copy that is leaving.
    fn take_for(&mut self, se: SeId) -> Vec<SimMessage>;
    /// Copies pending inputs of a copy that is being cloned.
    fn clone_for(&self, se: SeId) -> Vec<SimMessage>;
    fn insert(&mut self, msg: SimMessage) -> Result<(), RunError>;
}

pub(crate) struct LpCore {
    pub lp: LpId,
    pub lps: usize,
    pub cfg: Arc<RunConfig>,
    pub faults: Arc<Faults>,
    ep: Endpoint,
    sink: Sender<Report>,
    pub map: OwnershipMap,
    pub matrix: CommMatrix,
    last_moved: HashMap<SeId, u64>,
    eval_index: u64,
    pub dead: BTreeSet<LpId>,
    /// Dead peers whose copies are already gone from the map.
    recovered: BTreeSet<LpId>,
    last_eos: Vec<Option<u64>>,
    /// Model, broadcast, null and anti messages in arrival order.
    pub data: VecDeque<SimMessage>,
    pub gvt_in: VecDeque<(LpId, GvtMsg)>,
    eos: BTreeMap<u64, BTreeSet<LpId>>,
    ready: BTreeMap<u64, BTreeSet<LpId>>,
    proposals: BTreeMap<u64, BTreeMap<LpId, Vec<Proposal>>>,
    transfers: BTreeMap<u64, BTreeMap<LpId, Vec<TransferItem>>>,
    clones: BTreeMap<u64, BTreeMap<LpId, Vec<TransferItem>>>,
    done: BTreeSet<LpId>,
    pub counters: LpCounters,
    pub unreported_nulls: u64,
}

impl LpCore {
    pub fn new(
        cfg: Arc<RunConfig>,
        faults: Arc<Faults>,
        ep: Endpoint,
        sink: Sender<Report>,
        map: OwnershipMap,
    ) -> Self {
        let lps = ep.lps();
        LpCore {
            lp: ep.lp(),
            lps,
            matrix: CommMatrix::new(cfg.gaia.window, lps),
            cfg,
            faults,
            ep,
            sink,
            map,
            last_moved: HashMap::new(),
            eval_index: 0,
            dead: BTreeSet::new(),
            recovered: BTreeSet::new(),
            last_eos: vec![None; lps],
            data: VecDeque::new(),
            gvt_in: VecDeque::new(),
            eos: BTreeMap::new(),
            ready: BTreeMap::new(),
            proposals: BTreeMap::new(),
            transfers: BTreeMap::new(),
            clones: BTreeMap::new(),
            done: BTreeSet::new(),
            counters: LpCounters::default(),
            unreported_nulls: 0,
        }
    }

    pub fn alive_peers(&self) -> Vec<LpId> {
        (0..self.lps as u32).map(LpId).filter(|p| *p != self.lp && !self.dead.contains(p)).collect()
    }

    pub fn report(&self, r: Report) {
        // The collector only goes away once every LP finished.
        let _ = self.sink.send(r);
    }

    fn mark_dead(&mut self, peer: LpId) {
        if self.dead.insert(peer) {
            log::warn!("{}: {peer} presumed dead", self.lp);
        }
    }

    pub fn send(&mut self, msg: SimMessage) -> Result<(), RunError> {
        let to = msg.dst_lp;
        if self.dead.contains(&to) {
            return Ok(());
        }
        match self.ep.send(msg) {
            Ok(()) => Ok(()),
            Err(TransportError::Down(p)) if self.cfg.ft.enabled => {
                self.mark_dead(p);
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn send_control(&mut self, to: LpId, c: &Control) -> Result<(), RunError> {
        let m = SimMessage::control(self.lp, to, VirtualTime::ZERO, c.encode());
        self.send(m)
    }

    pub fn broadcast_control(&mut self, c: &Control) -> Result<(), RunError> {
        let body = c.encode();
        for p in self.alive_peers() {
            self.send(SimMessage::control(self.lp, p, VirtualTime::ZERO, body.clone()))?;
        }
        Ok(())
    }

    /// Handles one inbound item. Returns `false` if the deadline passed first.
    pub fn pump(&mut self, deadline: Option<Instant>) -> Result<bool, RunError> {
        let item = match self.ep.recv_deadline(deadline) {
            Ok(Some(x)) => x,
            Ok(None) => return Ok(false),
            Err(TransportError::InboxClosed(_)) if self.alive_peers().is_empty() => return Ok(false),
            Err(e) => return Err(e.into()),
        };
        match item {
            Inbound::Frame(m) if m.kind == MsgKind::Control => {
                let from = m.src_lp;
                let c = Control::decode(&m.payload).map_err(|e| RunError::Control {
                    lp: self.lp,
                    from,
                    reason: e.to_string(),
                })?;
                self.on_control(from, c);
            }
            Inbound::Frame(m) => self.data.push_back(m),
            Inbound::Bye(_) => {}
            Inbound::LinkDown(peer) if self.done.contains(&peer) => {}
            Inbound::LinkDown(peer) => {
                if !self.cfg.ft.enabled {
                    return Err(RunError::PeerLost { lp: self.lp, peer });
                }
                self.mark_dead(peer);
            }
        }
        Ok(true)
    }

    fn on_control(&mut self, from: LpId, c: Control) {
        match c {
            Control::EndOfStep { step } => {
                self.eos.entry(step).or_default().insert(from);
                let last = &mut self.last_eos[from.index()];
                *last = Some(last.map_or(step, |s| s.max(step)));
            }
            Control::Gvt(g) => self.gvt_in.push_back((from, g)),
            Control::Ready { step } => {
                self.ready.entry(step).or_default().insert(from);
            }
            Control::Proposals { step, moves } => {
                self.proposals.entry(step).or_default().insert(from, moves);
            }
            Control::Transfer { step, items } => {
                self.transfers.entry(step).or_default().insert(from, items);
            }
            Control::Clones { step, items } => {
                self.clones.entry(step).or_default().insert(from, items);
            }
            Control::Interactions { step, counts } => {
                for (se, partner, local, n) in counts {
                    self.matrix.record_n(se, step, partner, local, n);
                }
            }
            Control::Done => {
                self.done.insert(from);
            }
        }
    }

    fn has_all<'a>(&self, got: impl IntoIterator<Item = &'a LpId>) -> bool {
        let got: BTreeSet<LpId> = got.into_iter().copied().collect();
        self.alive_peers().iter().all(|p| got.contains(p))
    }

    fn wait_for(&mut self, what: &str, pred: impl Fn(&Self) -> bool) -> Result<(), RunError> {
        while !pred(self) {
            if !self.pump(None)? && self.alive_peers().is_empty() {
                return Err(RunError::Stalled { lp: self.lp, waiting_for: what.to_string() });
            }
        }
        Ok(())
    }

    /// Physical messages for one model send.
    pub fn route(&self, o: Outgoing) -> Vec<SimMessage> {
        let mut payload = o.payload;
        if self.faults.corrupts(self.lp) {
            payload.push(0xFF);
        }
        let msg = |kind, dst, dst_lp, payload| SimMessage {
            id: o.id,
            kind,
            src: o.id.src,
            dst,
            src_lp: self.lp,
            dst_lp,
            send_ts: o.send_ts,
            recv_ts: o.recv_ts,
            payload,
        };
        match o.target {
            Target::Entity(e) => {
                self.map.copies(e).map(|(se, lp)| msg(MsgKind::Model, se, lp, payload.clone())).collect()
            }
            Target::Broadcast => (0..self.lps as u32)
                .map(LpId)
                .filter(|lp| !self.dead.contains(lp))
                .map(|lp| msg(MsgKind::Broadcast, SeId::ANY, lp, payload.clone()))
                .collect(),
        }
    }

    /// Accounts a committed step and forwards it to the collector.
    pub fn commit(&mut self, rec: StepRecord) -> Result<(), RunError> {
        let adaptive = self.cfg.gaia.enabled && self.lps > 1;
        let mut traffic: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        let mut remote: BTreeMap<LpId, HashMap<(SeId, LpId, bool), u32>> = BTreeMap::new();
        let mut fingerprint = EventFingerprint::default();
        for d in &rec.deliveries {
            let dst_owner = self.map.owner_at(d.dst, d.send_ts.0);
            let local = dst_owner == Some(d.src_lp);
            let t = traffic.entry(d.send_ts.0).or_default();
            if local {
                t.0 += 1;
            } else {
                t.1 += 1;
            }
            if d.dst.replica == 0 {
                fingerprint.add(d.logical, d.dst.entity, VirtualTime(rec.step));
            }
            if adaptive {
                self.matrix.record(d.dst, rec.step, d.src_lp, local);
                let partner = dst_owner.unwrap_or(self.lp);
                match self.map.owner(d.src) {
                    Some(o) if o == self.lp => self.matrix.record(d.src, rec.step, partner, local),
                    Some(o) => *remote.entry(o).or_default().entry((d.src, partner, local)).or_default() += 1,
                    None => {}
                }
            }
        }
        for (to, counts) in remote {
            let mut counts: Vec<(SeId, LpId, bool, u32)> =
                counts.into_iter().map(|((se, p, l), n)| (se, p, l, n)).collect();
            counts.sort_unstable();
            self.send_control(to, &Control::Interactions { step: rec.step, counts })?;
        }
        self.counters.steps += 1;
        self.counters.sent += rec.sent;
        self.counters.delivered += rec.deliveries.len() as u64;
        self.counters.beyond_horizon += rec.beyond_horizon;
        self.counters.quarantined += rec.quarantined.len() as u64;
        let nulls = std::mem::take(&mut self.unreported_nulls);
        self.report(Report::Step(StepReport {
            lp: self.lp,
            step: rec.step,
            hashes: rec.hashes,
            traffic: traffic.into_iter().map(|(s, (l, r))| (s, l, r)).collect(),
            positions: rec.positions,
            sent: rec.sent,
            beyond_horizon: rec.beyond_horizon,
            quarantined: rec.quarantined,
            rollbacks: rec.rollbacks,
            antimessages: rec.antimessages,
            nulls,
            wall_us: rec.wall_us,
            fingerprint,
        }));
        Ok(())
    }

    /// Migration fence before step `t`. Every live LP calls it with every step
    /// below `t` committed and nothing at or after `t` executed.
    pub fn fence(&mut self, t: u64, exec: &mut LpExec, store: &mut dyn PendingStore) -> Result<(), RunError> {
        if self.lps < 2 {
            return Ok(());
        }
        // 1. Everyone has committed and reported every step below `t`.
        self.broadcast_control(&Control::Ready { step: t })?;
        self.wait_for("fence ready", |c| c.has_all(c.ready.get(&t).into_iter().flatten()))?;
        self.ready.remove(&t);
        let buffered: Vec<SimMessage> = self.data.drain(..).collect();
        store.absorb(buffered)?;

        // 2. Exchange proposals; every LP derives the same plan.
        let hosted: Vec<SeId> = exec.hosted().map(|(se, _)| *se).collect();
        let own = propose(&self.matrix, hosted, self.lp, t, self.eval_index, &self.last_moved, &self.cfg.gaia);
        self.broadcast_control(&Control::Proposals { step: t, moves: own.clone() })?;
        self.wait_for("fence proposals", |c| c.has_all(c.proposals.get(&t).into_iter().flat_map(|m| m.keys())))?;
        let mut all = own;
        for (_, moves) in self.proposals.remove(&t).unwrap_or_default() {
            all.extend(moves);
        }
        all.retain(|m| !self.dead.contains(&m.to) && !self.dead.contains(&m.from));
        let alive: Vec<bool> = (0..self.lps as u32).map(|i| !self.dead.contains(&LpId(i))).collect();
        let plan = {
            let map = &self.map;
            let nodes = &self.cfg.nodes;
            let filter = |m: &[Proposal]| ft_migration_filter(m, map, nodes);
            let extra: Option<MoveFilter<'_>> = if map.replicas() > 1 { Some(&filter) } else { None };
            reconcile_among(t, all, map.roster_sizes(), &alive, &self.cfg.gaia, extra)
        };
        for m in &plan.moves {
            self.last_moved.insert(m.se, self.eval_index);
        }
        self.eval_index += 1;

        // 3. Hand the moving copies over.
        let mut outgoing: BTreeMap<LpId, Vec<TransferItem>> =
            self.alive_peers().into_iter().map(|p| (p, Vec::new())).collect();
        for m in plan.moves.iter().filter(|m| m.from == self.lp) {
            let hosted = exec.evict(m.se).ok_or_else(|| {
                RunError::Internal(format!("{} planned to move {} which it does not host", self.lp, m.se))
            })?;
            let item = TransferItem {
                se: m.se,
                hosted,
                window: self.matrix.take(m.se),
                pending: store.take_for(m.se),
                sent_at_us: now_us(),
            };
            outgoing.entry(m.to).or_default().push(item);
            self.counters.migrations_out += 1;
        }
        for (to, items) in outgoing {
            self.send_control(to, &Control::Transfer { step: t, items })?;
        }
        self.wait_for("fence transfers", |c| c.has_all(c.transfers.get(&t).into_iter().flat_map(|m| m.keys())))?;
        for (from, items) in self.transfers.remove(&t).unwrap_or_default() {
            for item in items {
                let bytes = bincode::serialized_size(&item).unwrap_or(0);
                let se = item.se;
                exec.host(se, item.hosted);
                if let Some(w) = item.window {
                    self.matrix.insert(se, w);
                }
                for mut m in item.pending {
                    m.dst_lp = self.lp;
                    store.insert(m)?;
                }
                self.report(Report::Migration(MigrationRecord {
                    step: t,
                    entity: se,
                    from,
                    to: self.lp,
                    bytes,
                    transfer_us: now_us().saturating_sub(item.sent_at_us),
                    resume_step: t,
                }));
                self.counters.migrations_in += 1;
            }
        }
        for m in &plan.moves {
            self.map.set_owner(m.se, Some(m.to), t);
        }
        Ok(())
    }

    /// End-of-step barrier. Under fault tolerance a silent peer is presumed
    /// dead after the barrier timeout; otherwise a broken link is fatal.
    pub fn end_of_step(&mut self, t: u64) -> Result<(), RunError> {
        self.broadcast_control(&Control::EndOfStep { step: t })?;
        let ft = self.cfg.ft;
        let deadline = ft.enabled.then(|| Instant::now() + Duration::from_secs_f64(ft.barrier_timeout_s));
        while !self.has_all(self.eos.get(&t).into_iter().flatten()) {
            if !self.pump(deadline)? {
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    let got = self.eos.get(&t).cloned().unwrap_or_default();
                    for p in self.alive_peers().into_iter().filter(|p| !got.contains(p)) {
                        log::warn!("{}: no end-of-step {t} from {p} within {}s", self.lp, ft.barrier_timeout_s);
                        self.mark_dead(p);
                    }
                } else if self.alive_peers().is_empty() {
                    break;
                }
            }
        }
        self.eos.retain(|s, _| *s > t);
        Ok(())
    }

    /// Applies crashes that happened at or before step `t`, once the barrier of
    /// `t` completed. A peer that announced step `s` and then died failed at
    /// `s + 1`; every survivor sees the same announcements, so all of them
    /// recover at the same step.
    pub fn recover(&mut self, t: u64, exec: &mut LpExec, store: &mut dyn PendingStore) -> Result<(), RunError> {
        let newly: BTreeSet<LpId> = self
            .dead
            .iter()
            .copied()
            .filter(|d| !self.recovered.contains(d) && self.last_eos[d.index()].is_none_or(|s| s < t))
            .collect();
        if newly.is_empty() {
            return Ok(());
        }
        let nodes = self.cfg.nodes.clone();
        self.recovered.extend(newly.iter().copied());
        let report = on_crash(&mut self.map, &nodes, &self.recovered, t + 1, &self.cfg.ft)?;
        log::info!("{}: recovered from loss of {:?} after step {t}", self.lp, newly);

        if !report.reclones.is_empty() {
            let mut outgoing: BTreeMap<LpId, Vec<TransferItem>> =
                self.alive_peers().into_iter().map(|p| (p, Vec::new())).collect();
            for r in report.reclones.iter().filter(|r| r.source_lp == self.lp) {
                let hosted = exec
                    .get(r.source)
                    .cloned()
                    .ok_or_else(|| RunError::Internal(format!("{} cannot clone {}: not hosted", self.lp, r.source)))?;
                let pending = store
                    .clone_for(r.source)
                    .into_iter()
                    .map(|mut m| {
                        m.dst = r.copy;
                        m.dst_lp = r.to;
                        m
                    })
                    .collect();
                outgoing.entry(r.to).or_default().push(TransferItem {
                    se: r.copy,
                    hosted,
                    window: None,
                    pending,
                    sent_at_us: now_us(),
                });
            }
            for (to, items) in outgoing {
                self.send_control(to, &Control::Clones { step: t, items })?;
            }
            self.wait_for("clones", |c| c.has_all(c.clones.get(&t).into_iter().flat_map(|m| m.keys())))?;
            for (_, items) in self.clones.remove(&t).unwrap_or_default() {
                for item in items {
                    exec.host(item.se, item.hosted);
                    for m in item.pending {
                        store.insert(m)?;
                    }
                }
            }
        }
        if self.alive_peers().iter().all(|p| *p > self.lp) {
            self.report(Report::Recovery(report));
        }
        Ok(())
    }

    /// Orderly end of the run: waits until every live peer is done too, so no
    /// late control frame hits a closed link.
    pub fn finish(mut self, mut extra: LpCounters) -> Result<(), RunError> {
        self.broadcast_control(&Control::Done)?;
        self.wait_for("shutdown", |c| c.has_all(c.done.iter()))?;
        extra.add(&self.counters);
        extra.frames_sent = self.ep.frames_sent();
        self.report(Report::Finished { lp: self.lp, counters: extra });
        self.ep.close();
        Ok(())
    }

    /// Fail-stop of this LP's node.
    pub fn crash(self, step: u64) {
        self.faults.crash_fired(self.lp, step);
        self.report(Report::Crashed { lp: self.lp, step });
        self.ep.crash();
    }

    pub fn crash_due(&self, step: u64) -> bool {
        self.faults.crash_due(self.lp, step)
    }

    pub fn snapshot_due(&self, step: u64) -> bool {
        self.cfg.snapshot_steps.contains(&step)
    }
}
