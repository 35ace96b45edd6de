//! Parallel execution: one thread per LP, connected by a transport mesh, and a
//! collector that turns their reports into a digest and per-step metrics.

mod cmb;
pub mod control;
mod core;
pub mod report;
mod ts;
mod tw;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::SendRules;
use crate::digest::{DigestBuilder, DigestMode, EventFingerprint, TrajectoryDigest};
use crate::exec::{ExecError, Hosted, LpExec};
use crate::ft::dedup::{DedupState, FtMode, Quarantined};
use crate::ft::{replicated_map, FtError, FtParams, RecoveryReport};
use crate::ids::{EntityId, LpId, NodeId, VirtualTime};
use crate::migration::{compute_lcr, MigrationParams, MigrationRecord};
use crate::model::Simulation;
use crate::sync::cmb::CmbError;
use crate::sync::tw::TwError;
use crate::sync::{ProtocolKind, SyncParams};
use crate::transport::{connect_mesh, Faults, InjectionRecord, TransportConfig, TransportError};

pub use report::{LpCounters, Report, StepReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: u64,
    pub seed: u64,
    pub sync: SyncParams,
    pub gaia: MigrationParams,
    pub ft: FtParams,
    pub transport: TransportConfig,
    /// Node of each LP. Taken from the fault injector when a run starts.
    #[serde(skip)]
    pub nodes: Vec<NodeId>,
    /// Steps whose start-of-step positions are captured.
    pub snapshot_steps: BTreeSet<u64>,
    pub digest_mode: DigestMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon: 100,
            seed: 1,
            sync: SyncParams::default(),
            gaia: MigrationParams::default(),
            ft: FtParams::default(),
            transport: TransportConfig::default(),
            nodes: Vec::new(),
            snapshot_steps: BTreeSet::new(),
            digest_mode: DigestMode::Full,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    TimeWarp(#[from] TwError),
    #[error(transparent)]
    Cmb(#[from] CmbError),
    #[error(transparent)]
    Ft(#[from] FtError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{lp}: undecodable control frame from {from}: {reason}")]
    Control { lp: LpId, from: LpId, reason: String },
    #[error("{lp} lost its link to {peer} and fault tolerance is off")]
    PeerLost { lp: LpId, peer: LpId },
    #[error("{lp} stalled waiting for {waiting_for}")]
    Stalled { lp: LpId, waiting_for: String },
    #[error("{lp} sent to {to}, which is not downstream of it")]
    Topology { lp: LpId, to: LpId },
    #[error("{0} panicked")]
    Panic(LpId),
    #[error("{0}")]
    Internal(String),
}

/// Aggregated metrics of one simulated step. Deliveries are attributed to the
/// step that sent them; the delivery-only step at the horizon is folded into
/// the last row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    pub local: u64,
    pub remote: u64,
    pub sent: u64,
    pub nulls: u64,
    pub rollbacks: u64,
    pub antimessages: u64,
    pub migrations: u64,
    pub beyond_horizon: u64,
    pub quarantined: u64,
    /// Copies hosted by each LP after the step.
    pub rosters: Vec<usize>,
    /// Execution wall time of the step on each LP, microseconds.
    pub wall_us: Vec<u64>,
}

impl StepRow {
    pub fn lcr(&self) -> Option<f64> {
        compute_lcr(self.local, self.remote)
    }
}

/// One entity position at the start of a snapshot step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub entity: EntityId,
    pub x: f64,
    pub y: f64,
    pub lp: LpId,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub digest: Option<TrajectoryDigest>,
    pub fingerprint: EventFingerprint,
    pub rows: Vec<StepRow>,
    pub migrations: Vec<MigrationRecord>,
    pub recoveries: Vec<RecoveryReport>,
    pub crashed: Vec<(LpId, u64)>,
    pub quarantined: Vec<Quarantined>,
    pub snapshots: BTreeMap<u64, Vec<SnapshotRow>>,
    /// Final counters per LP; absent for LPs that crashed or failed.
    pub counters: Vec<Option<LpCounters>>,
    /// Replica hash reports that disagreed with another copy.
    pub digest_mismatches: u64,
    pub channels: usize,
    pub injections: Vec<InjectionRecord>,
    pub wall_s: f64,
}

impl RunOutcome {
    pub fn totals(&self) -> LpCounters {
        let mut t = LpCounters::default();
        for c in self.counters.iter().flatten() {
            t.add(c);
        }
        t
    }

    /// Column sums of the metrics rows that disagree with the LP counters.
    /// Only meaningful when no LP crashed.
    pub fn reconcile(&self) -> Vec<String> {
        let t = self.totals();
        let sum = |f: fn(&StepRow) -> u64| self.rows.iter().map(f).sum::<u64>();
        let checks = [
            ("local+remote", sum(|r| r.local + r.remote), t.delivered),
            ("sent", sum(|r| r.sent), t.sent),
            ("nulls", sum(|r| r.nulls), t.nulls),
            ("rollbacks", sum(|r| r.rollbacks), t.rollbacks),
            ("antimessages", sum(|r| r.antimessages), t.antimessages),
            ("migrations", sum(|r| r.migrations), t.migrations_in),
            ("beyond_horizon", sum(|r| r.beyond_horizon), t.beyond_horizon),
            ("quarantined", sum(|r| r.quarantined), t.quarantined),
        ];
        checks
            .into_iter()
            .filter(|(_, rows, counters)| rows != counters)
            .map(|(name, rows, counters)| format!("{name}: rows sum to {rows}, counters say {counters}"))
            .collect()
    }
}

/// A failed run with whatever was collected before the failure.
#[derive(Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: RunError,
    pub partial: Box<RunOutcome>,
}

impl std::fmt::Debug for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunFailure")
            .field("error", &self.error)
            .field("steps_collected", &self.partial.rows.iter().filter(|r| r.local + r.remote > 0).count())
            .finish_non_exhaustive()
    }
}

impl From<RunError> for RunFailure {
    fn from(error: RunError) -> Self {
        RunFailure { error, partial: Box::default() }
    }
}

fn validate(sim: &Simulation, cfg: &RunConfig, faults: &Faults) -> Result<(), RunError> {
    let bad = |s: String| Err(RunError::Config(s));
    if faults.nodes().len() != sim.lps {
        return bad(format!("{} LPs but the fault injector knows {}", sim.lps, faults.nodes().len()));
    }
    if sim.placement.len() != sim.model.entities.len() {
        return bad(format!("{} entities but {} placements", sim.model.entities.len(), sim.placement.len()));
    }
    if cfg.sync.lookahead == 0 {
        return bad("sync.lookahead must be at least 1".into());
    }
    if cfg.sync.protocol == ProtocolKind::Cmb && cfg.sync.lookahead > sim.model.lookahead {
        return bad(format!(
            "sync.lookahead {} exceeds the model's guaranteed lookahead {}",
            cfg.sync.lookahead, sim.model.lookahead
        ));
    }
    if cfg.ft.enabled && cfg.sync.protocol != ProtocolKind::TimeStepped {
        return bad(format!("replication requires the time-stepped protocol, not {}", cfg.sync.protocol));
    }
    if cfg.ft.enabled && cfg.ft.barrier_timeout_s <= 0.0 {
        return bad("ft.barrier_timeout_s must be positive".into());
    }
    if cfg.ft.enabled && cfg.ft.mode == FtMode::Byzantine && cfg.ft.replicas > 1 && cfg.ft.replicas < 3 {
        return Err(FtError::Degree { mode: FtMode::Byzantine, replicas: cfg.ft.replicas, need: 3 }.into());
    }
    if cfg.gaia.enabled && (cfg.gaia.window == 0 || cfg.gaia.eval_every == 0) {
        return bad("gaia.window and gaia.eval_every must be positive".into());
    }
    if cfg.horizon == 0 {
        return bad("horizon must be at least 1".into());
    }
    Ok(())
}

/// Runs `sim` on one thread per LP.
pub fn run_parallel(sim: &Simulation, cfg: &RunConfig, faults: Arc<Faults>) -> Result<RunOutcome, RunFailure> {
    validate(sim, cfg, &faults)?;
    let lps = sim.lps;
    let mut cfg = cfg.clone();
    cfg.nodes = faults.nodes().to_vec();
    let cfg = Arc::new(cfg);
    let map = replicated_map(&sim.placement, &cfg.nodes, &cfg.ft).map_err(RunError::from)?;
    let model = Arc::new(sim.model.clone());
    let n = model.entities.len();
    let rules = SendRules {
        floor: cfg.sync.protocol.delay_floor(cfg.sync.lookahead),
        protocol: cfg.sync.protocol.name(),
        horizon: VirtualTime(cfg.horizon),
        entities: n as u64,
    };
    let degree = cfg.ft.degree();
    let mesh = connect_mesh(lps, &cfg.transport, faults.clone()).map_err(RunError::from)?;
    let channels = mesh.channel_count();
    let (tx, rx) = crossbeam_channel::unbounded();

    let started = Instant::now();
    let mut handles = Vec::with_capacity(lps);
    for ep in mesh.into_endpoints() {
        let lp = ep.lp();
        let dedup = if degree > 1 { DedupState::new(cfg.ft.mode, degree) } else { DedupState::disabled() };
        let mut exec = LpExec::new(lp, model.clone(), cfg.seed, rules, dedup);
        for se in map.hosted_by(lp) {
            let decl = &model.entities[se.entity.index()];
            exec.host(se, Hosted { state: decl.initial_state.clone(), next_seq: 0 });
        }
        let core = core::LpCore::new(cfg.clone(), faults.clone(), ep, tx.clone(), map.clone());
        let sink = tx.clone();
        let protocol = cfg.sync.protocol;
        let h = std::thread::Builder::new()
            .name(format!("lp-{}", lp.0))
            .spawn(move || {
                let res = match protocol {
                    ProtocolKind::TimeStepped => ts::run(core, exec),
                    ProtocolKind::Cmb => cmb::run(core, exec),
                    ProtocolKind::TimeWarp => tw::run(core, exec),
                };
                if let Err(e) = &res {
                    log::error!("{lp}: {e}");
                    let _ = sink.send(Report::Failed { lp, error: e.to_string() });
                }
                res
            })
            .map_err(|e| RunError::Internal(format!("cannot spawn thread for {lp}: {e}")))?;
        handles.push((lp, h));
    }
    drop(tx);

    let mut c = Collector::new(cfg.clone(), lps, n);
    for r in rx {
        c.absorb(r);
    }
    let mut errors: Vec<RunError> = Vec::new();
    for (lp, h) in handles {
        match h.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => errors.push(e),
            Err(_) => errors.push(RunError::Panic(lp)),
        }
    }
    let mut out = c.finish();
    out.channels = channels;
    out.injections = faults.log();
    out.wall_s = started.elapsed().as_secs_f64();

    // A peer's failure shows up at the others as a lost link; report the cause.
    errors.sort_by_key(|e| matches!(e, RunError::PeerLost { .. }));
    if let Some(error) = errors.into_iter().next() {
        return Err(RunFailure { error, partial: Box::new(out) });
    }
    if let Some(step) = incomplete_step(&out, cfg.horizon) {
        return Err(RunFailure {
            error: RunError::Internal(format!("no complete state report for step {step}")),
            partial: Box::new(out),
        });
    }
    Ok(out)
}

fn incomplete_step(out: &RunOutcome, horizon: u64) -> Option<u64> {
    let d = out.digest.as_ref()?;
    let have: BTreeSet<u64> = d.frames.iter().map(|f| f.step).collect();
    (0..=horizon).find(|s| !have.contains(s))
}

struct Collector {
    cfg: Arc<RunConfig>,
    digest: DigestBuilder,
    fingerprint: EventFingerprint,
    rows: Vec<StepRow>,
    migrations: Vec<MigrationRecord>,
    recoveries: Vec<RecoveryReport>,
    crashed: Vec<(LpId, u64)>,
    quarantined: Vec<Quarantined>,
    snapshots: BTreeMap<u64, BTreeMap<EntityId, (u16, SnapshotRow)>>,
    counters: Vec<Option<LpCounters>>,
}

impl Collector {
    fn new(cfg: Arc<RunConfig>, lps: usize, entities: usize) -> Self {
        let h = cfg.horizon;
        let rows = (0..h)
            .map(|step| StepRow { step, rosters: vec![0; lps], wall_us: vec![0; lps], ..Default::default() })
            .collect();
        Collector {
            digest: DigestBuilder::new(cfg.digest_mode, entities),
            cfg,
            fingerprint: EventFingerprint::default(),
            rows,
            migrations: Vec::new(),
            recoveries: Vec::new(),
            crashed: Vec::new(),
            quarantined: Vec::new(),
            snapshots: BTreeMap::new(),
            counters: vec![None; lps],
        }
    }

    fn row(&mut self, step: u64) -> &mut StepRow {
        let last = self.rows.len() - 1;
        &mut self.rows[(step as usize).min(last)]
    }

    fn absorb(&mut self, r: Report) {
        match r {
            Report::Step(s) => self.step(s),
            Report::Migration(m) => {
                self.row(m.step).migrations += 1;
                self.migrations.push(m);
            }
            Report::Recovery(rr) => self.recoveries.push(rr),
            Report::Finished { lp, counters } => self.counters[lp.index()] = Some(counters),
            Report::Crashed { lp, step } => self.crashed.push((lp, step)),
            Report::Failed { .. } => {}
        }
    }

    fn step(&mut self, s: StepReport) {
        let lp = s.lp.index();
        for (se, h) in &s.hashes {
            self.digest.record(s.step, se.entity, *h);
        }
        self.fingerprint.merge(&s.fingerprint);
        for &(send_step, l, r) in &s.traffic {
            let row = self.row(send_step);
            row.local += l;
            row.remote += r;
        }
        if let Some(pos) = &s.positions {
            let frame = self.snapshots.entry(s.step).or_default();
            for &(se, x, y) in pos {
                let cell = SnapshotRow { entity: se.entity, x, y, lp: s.lp };
                match frame.get(&se.entity) {
                    Some((rep, _)) if *rep <= se.replica => {}
                    _ => {
                        frame.insert(se.entity, (se.replica, cell));
                    }
                }
            }
        }
        let horizon = self.cfg.horizon;
        let row = self.row(s.step);
        row.sent += s.sent;
        row.nulls += s.nulls;
        row.rollbacks += s.rollbacks;
        row.antimessages += s.antimessages;
        row.beyond_horizon += s.beyond_horizon;
        row.quarantined += s.quarantined.len() as u64;
        row.wall_us[lp] += s.wall_us;
        if s.step < horizon {
            row.rosters[lp] = s.hashes.len();
        }
        self.quarantined.extend(s.quarantined);
    }

    fn finish(self) -> RunOutcome {
        let digest_mismatches = self.digest.mismatches();
        let mut quarantined = self.quarantined;
        quarantined.sort_by_key(|q| (q.logical, q.dst));
        let mut migrations = self.migrations;
        migrations.sort_by_key(|m| (m.step, m.entity));
        RunOutcome {
            digest: Some(self.digest.finish()),
            fingerprint: self.fingerprint,
            rows: self.rows,
            migrations,
            recoveries: self.recoveries,
            crashed: self.crashed,
            quarantined,
            snapshots: self
                .snapshots
                .into_iter()
                .map(|(s, f)| (s, f.into_values().map(|(_, r)| r).collect()))
                .collect(),
            counters: self.counters,
            digest_mismatches,
            ..Default::default()
        }
    }
}
