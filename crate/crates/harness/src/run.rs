//! Runs a scenario and writes its artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use padsim_core::digest::TrajectoryDigest;
use padsim_core::runtime::report::LpCounters;
use padsim_core::runtime::{SnapshotRow, StepRow};
use padsim_core::sequential::{sequential_run_observed, Observe};
use padsim_core::transport::Faults;
use padsim_core::{run_parallel, EntityId, RunError, RunOutcome, Simulation};
use padsim_models::{groups_model, idle_model, mobile_hosts, ModelsError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::{render_pairs, ModelConfig, Protocol, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] ModelsError),
    #[error("run failed: {0}")]
    Run(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("metrics do not reconcile with engine counters: {}", .0.join("; "))]
    Reconcile(Vec<String>),
    #[error(transparent)]
    Cost(#[from] crate::cost::CostError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn build_simulation(s: &Scenario) -> Result<Simulation, ModelsError> {
    match &s.model {
        ModelConfig::MobileHosts { params, allocation } => mobile_hosts(params, s.lps, *allocation, s.seed),
        ModelConfig::Groups => groups_model(),
        ModelConfig::Idle { per_lp } => idle_model(s.lps, *per_lp),
    }
}

/// Result of executing a scenario, complete or not.
#[derive(Debug)]
pub struct Executed {
    pub outcome: RunOutcome,
    pub error: Option<String>,
}

impl Executed {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn sequential(s: &Scenario, sim: &Simulation) -> Executed {
    let started = Instant::now();
    let observe = Observe { placement: Some(&sim.placement), capture: s.snapshot_steps.clone() };
    let out = match sequential_run_observed(&sim.model, s.horizon, s.seed, s.digest, &observe) {
        Ok(o) => o,
        Err(e) => return Executed { outcome: RunOutcome::default(), error: Some(e.to_string()) },
    };
    let mut rosters = vec![0usize; sim.lps];
    for lp in &sim.placement {
        rosters[lp.index()] += 1;
    }
    let rows = out
        .traffic
        .iter()
        .zip(&out.sent_per_step)
        .enumerate()
        .map(|(t, (&(local, remote), &sent))| StepRow {
            step: t as u64,
            local,
            remote,
            sent,
            rosters: rosters.clone(),
            ..Default::default()
        })
        .collect();
    let snapshots = out
        .captured
        .iter()
        .map(|(&t, states)| {
            let rows = states
                .iter()
                .enumerate()
                .filter_map(|(i, st)| {
                    let b = sim.model.behavior(sim.model.entities[i].behavior);
                    b.position(st).map(|(x, y)| SnapshotRow { entity: EntityId(i as u64), x, y, lp: sim.placement[i] })
                })
                .collect();
            (t, rows)
        })
        .collect();
    let counters = LpCounters {
        steps: s.horizon + 1,
        sent: out.sent,
        delivered: out.delivered,
        beyond_horizon: out.beyond_horizon,
        ..Default::default()
    };
    let outcome = RunOutcome {
        digest: Some(out.digest),
        fingerprint: out.fingerprint,
        rows,
        snapshots,
        counters: vec![Some(counters)],
        wall_s: started.elapsed().as_secs_f64(),
        ..Default::default()
    };
    Executed { outcome, error: None }
}

fn parallel(s: &Scenario, sim: &Simulation) -> Executed {
    let faults = Faults::new(s.faults.node_map(s.lps));
    for inj in s.faults.injections() {
        if let Err(e) = faults.inject(inj) {
            return Executed { outcome: RunOutcome::default(), error: Some(RunError::from(e).to_string()) };
        }
    }
    match run_parallel(sim, &s.run_config(), Arc::new(faults)) {
        Ok(outcome) => Executed { outcome, error: None },
        Err(f) => Executed { outcome: *f.partial, error: Some(f.error.to_string()) },
    }
}

pub fn execute(s: &Scenario) -> Result<Executed, HarnessError> {
    let sim = build_simulation(s)?;
    Ok(match s.protocol {
        Protocol::Sequential => sequential(s, &sim),
        Protocol::Parallel(_) => parallel(s, &sim),
    })
}

/// Rows-versus-counters mismatches, or `None` when the check does not apply
/// because an LP went down and took its counters with it.
pub fn reconcile(ex: &Executed) -> Option<Vec<String>> {
    let complete = ex.ok() && ex.outcome.crashed.is_empty() && ex.outcome.counters.iter().all(Option::is_some);
    complete.then(|| ex.outcome.reconcile())
}

pub const METRICS: &str = "metrics.csv";
pub const TIMING: &str = "timing.csv";
pub const MIGRATIONS: &str = "migrations.csv";
pub const COST: &str = "cost.json";
pub const MANIFEST: &str = "run-manifest.json";
pub const DIGEST: &str = "digest.bin";
pub const SCENARIO: &str = "scenario.toml";
pub const SNAPSHOT_DIR: &str = "snapshots";

pub fn snapshot_file(step: u64) -> String {
    format!("step_{step}.csv")
}

/// Saved at every run; `cost` prices it later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostInput {
    pub wct_s: f64,
    pub nodes: Vec<String>,
    pub steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub build_hash: String,
    pub seed: u64,
    pub protocol: String,
    /// Resolved scenario; `padsim run <this manifest>` repeats the run.
    pub scenario: String,
    pub status: String,
    pub error: Option<String>,
    pub wct_s: f64,
    pub steps_recorded: usize,
    pub totals: LpCounters,
    pub per_lp: Vec<Option<LpCounters>>,
    pub reconcile: Option<Vec<String>>,
    pub crashed: Vec<(u32, u64)>,
    pub recoveries: usize,
    pub quarantined: usize,
    pub digest_mismatches: u64,
    pub injections: Vec<String>,
    pub channels: usize,
}

/// SHA-256 of the running executable, truncated to 16 hex digits.
pub fn build_hash() -> String {
    let Some(bytes) = std::env::current_exe().ok().and_then(|p| fs::read(p).ok()) else {
        return "unknown".into();
    };
    Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn lcr_cell(r: &StepRow) -> String {
    r.lcr().map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_metrics(path: &Path, rows: &[StepRow], lps: usize) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    let mut head =
        String::from("step,lcr_percent,messages_local,messages_remote,nulls,rollbacks,antimessages,migrations");
    for lp in 0..lps {
        head.push_str(&format!(",roster_lp{lp}"));
    }
    let out = (|| -> std::io::Result<()> {
        writeln!(w, "{head}")?;
        for r in rows {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.step,
                lcr_cell(r),
                r.local,
                r.remote,
                r.nulls,
                r.rollbacks,
                r.antimessages,
                r.migrations
            )?;
            for lp in 0..lps {
                write!(w, ",{}", r.rosters.get(lp).copied().unwrap_or(0))?;
            }
            writeln!(w)?;
        }
        w.flush()
    })();
    out.map_err(io_err(path))
}

fn write_timing(path: &Path, rows: &[StepRow], lps: usize) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    let out = (|| -> std::io::Result<()> {
        write!(w, "step")?;
        for lp in 0..lps {
            write!(w, ",wall_ms_lp{lp}")?;
        }
        writeln!(w)?;
        for r in rows {
            write!(w, "{}", r.step)?;
            for lp in 0..lps {
                match r.wall_us.get(lp) {
                    Some(us) => write!(w, ",{:.3}", *us as f64 / 1000.0)?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()
    })();
    out.map_err(io_err(path))
}

fn write_snapshots(dir: &Path, snaps: &BTreeMap<u64, Vec<SnapshotRow>>) -> Result<(), HarnessError> {
    if snaps.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (&t, rows) in snaps {
        let path = dir.join(snapshot_file(t));
        let mut w = create(&path)?;
        let out = (|| -> std::io::Result<()> {
            writeln!(w, "entity,x,y,lp")?;
            for r in rows {
                writeln!(w, "{},{},{},{}", r.entity.0, r.x, r.y, r.lp.0)?;
            }
            w.flush()
        })();
        out.map_err(io_err(&path))?;
    }
    Ok(())
}

fn write_migrations(path: &Path, out: &RunOutcome) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "step,entity,replica,from_lp,to_lp,bytes,transfer_us")?;
        for m in &out.migrations {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                m.step, m.entity.entity.0, m.entity.replica, m.from.0, m.to.0, m.bytes, m.transfer_us
            )?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)
        .map_err(|e| HarnessError::Artifact { path: path.into(), message: e.to_string() })?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_digest(path: &Path, d: &TrajectoryDigest) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    d.write_to(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_digest(run: &Path) -> Result<TrajectoryDigest, HarnessError> {
    let path = run.join(DIGEST);
    let mut f = File::open(&path).map_err(io_err(&path))?;
    TrajectoryDigest::read_from(&mut std::io::BufReader::new(&mut f))
        .map_err(|e| HarnessError::Artifact { path, message: e.to_string() })
}

/// Writes every artifact of an executed scenario into `dir`.
pub fn write_artifacts(dir: &Path, s: &Scenario, ex: &Executed) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let o = &ex.outcome;
    let lps = s.lps;
    write_metrics(&dir.join(METRICS), &o.rows, lps)?;
    write_timing(&dir.join(TIMING), &o.rows, lps)?;
    write_snapshots(&dir.join(SNAPSHOT_DIR), &o.snapshots)?;
    write_migrations(&dir.join(MIGRATIONS), o)?;
    if let Some(d) = &o.digest {
        write_digest(&dir.join(DIGEST), d)?;
    } else {
        let _ = fs::remove_file(dir.join(DIGEST));
    }
    let scenario = render_pairs(&s.to_pairs());
    fs::write(dir.join(SCENARIO), &scenario).map_err(io_err(&dir.join(SCENARIO)))?;

    let mut nodes: Vec<String> = s.faults.node_map(lps).iter().map(|n| n.0.to_string()).collect();
    if s.protocol == Protocol::Sequential {
        nodes.truncate(1);
    }
    nodes.sort();
    nodes.dedup();
    write_json(&dir.join(COST), &CostInput { wct_s: o.wall_s, nodes, steps: s.horizon })?;

    let manifest = Manifest {
        tool: "padsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        build_hash: build_hash(),
        seed: s.seed,
        protocol: s.protocol.to_string(),
        scenario,
        status: if ex.ok() { "complete" } else { "failed" }.into(),
        error: ex.error.clone(),
        wct_s: o.wall_s,
        steps_recorded: o.rows.len(),
        totals: o.totals(),
        per_lp: o.counters.clone(),
        reconcile: reconcile(ex),
        crashed: o.crashed.iter().map(|(lp, t)| (lp.0, *t)).collect(),
        recoveries: o.recoveries.len(),
        quarantined: o.quarantined.len(),
        digest_mismatches: o.digest_mismatches,
        injections: o.injections.iter().map(|i| format!("{:.1} ms: {}", i.wall_ms, i.event)).collect(),
        channels: o.channels,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// `run`: execute, flush artifacts whatever happened, then report failure.
pub fn run_scenario(s: &Scenario, dir: &Path) -> Result<Executed, HarnessError> {
    let ex = execute(s)?;
    let manifest = write_artifacts(dir, s, &ex)?;
    if let Some(e) = &ex.error {
        return Err(HarnessError::Run(e.clone()));
    }
    match manifest.reconcile {
        Some(m) if !m.is_empty() => Err(HarnessError::Reconcile(m)),
        _ => Ok(ex),
    }
}
