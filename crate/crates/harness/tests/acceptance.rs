//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs through the same scenario files and loader as the `padsim` binary.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use padsim_core::digest::{DigestComparison, TrajectoryDigest};
use padsim_core::ft::{audit_placement, ft_migration_filter, on_crash, replicated_map, FtMode, FtParams};
use padsim_core::migration::{reconcile_among, MigrationParams, Proposal};
use padsim_core::runtime::StepRow;
use padsim_core::{EntityId, LpId, NodeId, SeId};
use padsim_harness::cost::{cost_report, CostError};
use padsim_harness::run::write_artifacts;
use padsim_harness::{compare_runs, cost_of_run, execute, Executed, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random allocation on 3 LPs: mean LCR within this many points of 100/3.
const RANDOM_LCR_TOL: f64 = 2.0;
/// Stripes start: step-0 LCR must exceed this (reference run: 96.4).
const STRIPES_START_MIN: f64 = 60.0;
/// Stripes, steps 900-999: mean within this many points of 100/3.
const STRIPES_TAIL_TOL: f64 = 5.0;
/// Adaptive, steps 900-999: mean LCR floor (reference run: 90.9).
const ADAPTIVE_TAIL_MIN: f64 = 60.0;
const ADAPTIVE_OVER_STATIC: f64 = 1.7;
/// Smoothing window for trend checks, in steps.
const SMOOTH: usize = 50;
/// A smoothed window may move against the required trend by at most this
/// many LCR points relative to the previous window.
const TREND_SLACK: f64 = 1.5;
const GROUPS_MAX_PERIODS: u64 = 3;
const PLACEMENT_CASES: u64 = 10_000;
/// Cost comparisons are exact up to float rounding of the products.
const COST_EPS: f64 = 1e-9;

fn scenario(file: &str, overrides: &[&str]) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(file);
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::load(&path, &o).unwrap_or_else(|e| panic!("{file}: {e}"))
}

fn run(s: &Scenario) -> Result<Executed, String> {
    let ex = execute(s).map_err(|e| e.to_string())?;
    if let Some(e) = &ex.error {
        return Err(format!("run failed: {e}"));
    }
    if let Some(m) = padsim_harness::run::reconcile(&ex) {
        if !m.is_empty() {
            return Err(format!("metrics do not reconcile: {m:?}"));
        }
    }
    Ok(ex)
}

fn digest(ex: &Executed) -> Result<&TrajectoryDigest, String> {
    ex.outcome.digest.as_ref().ok_or_else(|| "no digest".to_string())
}

fn mean_lcr(rows: &[StepRow]) -> f64 {
    let v: Vec<f64> = rows.iter().filter_map(StepRow::lcr).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn smoothed(rows: &[StepRow]) -> Vec<f64> {
    rows.chunks(SMOOTH).map(mean_lcr).collect()
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(" ")
}

type Outcome = Result<String, String>;

fn equivalence() -> Outcome {
    let started = Instant::now();
    let mut runs = 0;
    for seed in 1..=3 {
        for lps in 1..=3 {
            let base = &[format!("seed={seed}"), format!("lps={lps}")];
            let set = |extra: &[&str]| {
                let mut o: Vec<&str> = base.iter().map(String::as_str).collect();
                o.extend_from_slice(extra);
                scenario("reduced.toml", &o)
            };
            let oracle = run(&set(&["sync.protocol=sequential"]))?;
            let want = digest(&oracle)?.clone();
            runs += 1;
            for protocol in ["time-stepped", "cmb", "time-warp"] {
                for gaia in [false, true] {
                    let p = format!("sync.protocol={protocol}");
                    let g = format!("gaia.enabled={gaia}");
                    let ex = run(&set(&[&p, &g]))
                        .map_err(|e| format!("seed {seed} lps {lps} {protocol} gaia {gaia}: {e}"))?;
                    runs += 1;
                    let c = digest(&ex)?.compare(&want);
                    if c != DigestComparison::Equal {
                        return Err(format!("seed {seed} lps {lps} {protocol} gaia {gaia}: {c:?}"));
                    }
                }
            }
        }
    }
    Ok(format!("{runs} runs, all digests equal to sequential, {:.1} s", started.elapsed().as_secs_f64()))
}

struct LcrRuns {
    random_static: Vec<StepRow>,
    stripes_static: Vec<StepRow>,
    random_adaptive: Vec<StepRow>,
}

fn lcr_runs() -> Result<LcrRuns, String> {
    let rows = |f: &str| run(&scenario(f, &["snapshot_steps=[]"])).map(|e| e.outcome.rows);
    Ok(LcrRuns {
        random_static: rows("random-static.toml")?,
        stripes_static: rows("stripes-static.toml")?,
        random_adaptive: rows("random-adaptive.toml")?,
    })
}

fn random_baseline(r: &LcrRuns) -> Outcome {
    let m = mean_lcr(&r.random_static);
    let want = 100.0 / 3.0;
    if r.random_static.len() != 1000 {
        return Err(format!("{} metric rows, expected 1000", r.random_static.len()));
    }
    if (m - want).abs() <= RANDOM_LCR_TOL {
        Ok(format!("mean LCR {m:.2} (target {want:.1} ± {RANDOM_LCR_TOL})"))
    } else {
        Err(format!("mean LCR {m:.2} outside {want:.1} ± {RANDOM_LCR_TOL}"))
    }
}

fn stripes_decay(r: &LcrRuns) -> Outcome {
    let rows = &r.stripes_static;
    let start = rows[0].lcr().unwrap_or(0.0);
    let s = smoothed(rows);
    let tail = mean_lcr(&rows[900..1000]);
    let rises = s.windows(2).filter(|w| w[1] > w[0] + TREND_SLACK).count();
    let detail = format!("step 0 {start:.1}, tail mean {tail:.2}, smoothed [{}]", fmt_series(&s));
    if start > STRIPES_START_MIN && rises == 0 && s.last() < s.first() && (tail - 100.0 / 3.0).abs() <= STRIPES_TAIL_TOL
    {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn adaptive(r: &LcrRuns) -> Outcome {
    let rows = &r.random_adaptive;
    let s = smoothed(rows);
    let tail = mean_lcr(&rows[900..1000]);
    let base = mean_lcr(&r.random_static);
    let drops = s.windows(2).filter(|w| w[1] < w[0] - TREND_SLACK).count();
    let detail = format!("tail mean {tail:.2}, {:.2}x static {base:.2}, smoothed [{}]", tail / base, fmt_series(&s));
    if drops == 0 && s.last() > s.first() && tail >= ADAPTIVE_TAIL_MIN && tail >= ADAPTIVE_OVER_STATIC * base {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn groups() -> Outcome {
    let s = scenario("groups.toml", &[]);
    let e = s.gaia.eval_every;
    let ex = run(&s)?;
    let rows = &ex.outcome.rows;
    // First evaluation period after which every step is fully local.
    let first = (1..=rows.len() as u64 / e).find(|&k| rows[(k * e) as usize..].iter().all(|r| r.lcr() == Some(100.0)));
    match first {
        Some(k) if k <= GROUPS_MAX_PERIODS => {
            Ok(format!("LCR 100 from step {} on (period {k}), final rosters {:?}", k * e, rows.last().unwrap().rosters))
        }
        Some(k) => Err(format!("co-resident only after {k} periods")),
        None => Err(format!("never fully local; last LCR {:?}", rows.last().and_then(StepRow::lcr))),
    }
}

fn cmb_ring() -> Outcome {
    let cmb = run(&scenario("cmb-ring-idle.toml", &[]))?;
    let ts = run(&scenario("cmb-ring-idle.toml", &["sync.protocol=time-stepped"]))?;
    let nulls = cmb.outcome.totals().nulls;
    let reported: u64 = cmb.outcome.rows.iter().map(|r| r.nulls).sum();
    let ts_nulls = ts.outcome.totals().nulls;
    let steps = cmb.outcome.rows.len();
    let detail = format!("{steps} steps, CMB nulls {nulls} (rows {reported}), time-stepped nulls {ts_nulls}");
    if steps == 1000 && nulls > 0 && reported == nulls && ts_nulls == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn time_warp_slow() -> Outcome {
    let tw = run(&scenario("tw-slow-lp.toml", &[]))?;
    let oracle = run(&oracle_for_tw())?;
    let t = tw.outcome.totals();
    let c = digest(&tw)?.compare(digest(&oracle)?);
    let detail = format!("digest {c:?}, rollbacks {}, antimessages {}", t.rollbacks, t.antimessages);
    if c == DigestComparison::Equal && t.rollbacks > 0 && t.antimessages > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The slow-LP scenario without the injection, on the sequential executor.
fn oracle_for_tw() -> Scenario {
    let mut s = scenario("tw-slow-lp.toml", &[]);
    s.protocol = padsim_harness::Protocol::Sequential;
    s.faults.slow = None;
    s
}

fn fault_tolerance() -> Outcome {
    let crashed = run(&scenario("ft-crash.toml", &[]))?;
    let clean = run(&scenario("ft-crash.toml", &["ft.enabled=false", "ft.replicas=1", "faults.crash=[]"]))?;
    let c = digest(&crashed)?.compare(digest(&clean)?);
    let recovered = crashed.outcome.recoveries.len();
    if c != DigestComparison::Equal || crashed.outcome.crashed.is_empty() {
        return Err(format!("digest {c:?}, crashed {:?}", crashed.outcome.crashed));
    }
    let violations = placement_audit(PLACEMENT_CASES)?;
    if violations > 0 {
        return Err(format!("{violations} placement violations"));
    }
    Ok(format!(
        "digest equal after losing {:?}, {recovered} recovery, 0 violations in {PLACEMENT_CASES} placement cases",
        crashed.outcome.crashed
    ))
}

/// Random placements, migration rounds and crashes; counts audit failures.
fn placement_audit(cases: u64) -> Result<u64, String> {
    let mut violations = 0;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let lps = rng.gen_range(2..=8usize);
        let nodes: Vec<NodeId> = (0..lps).map(|_| NodeId(rng.gen_range(0..lps as u32))).collect();
        let distinct = nodes.iter().collect::<BTreeSet<_>>().len();
        let r = rng.gen_range(1..=3usize).min(distinct);
        let entities = rng.gen_range(1..16u64);
        let placement: Vec<LpId> = (0..entities).map(|_| LpId(rng.gen_range(0..lps as u32))).collect();
        let mut ft = FtParams { enabled: true, replicas: r, mode: FtMode::Crash, ..Default::default() };
        let mut map = replicated_map(&placement, &nodes, &ft).map_err(|e| e.to_string())?;
        violations += audit_placement(&map, &nodes).len() as u64;
        let p = MigrationParams { enabled: true, balance_band: 1.0, ..Default::default() };
        let mut dead = BTreeSet::new();
        for step in 1..=rng.gen_range(0..5u64) {
            let proposals: Vec<Proposal> = (0..rng.gen_range(0..12))
                .filter_map(|_| {
                    let se = SeId::new(EntityId(rng.gen_range(0..entities)), rng.gen_range(0..r as u16));
                    let to = LpId(rng.gen_range(0..lps as u32));
                    let from = map.owner(se)?;
                    (from != to && !dead.contains(&to)).then_some(Proposal { se, from, to, score: 1.0 })
                })
                .collect();
            let alive: Vec<bool> = (0..lps as u32).map(|i| !dead.contains(&LpId(i))).collect();
            let filter = |m: &[Proposal]| ft_migration_filter(m, &map, &nodes);
            let plan = reconcile_among(step, proposals, map.roster_sizes(), &alive, &p, Some(&filter));
            for m in &plan.moves {
                map.set_owner(m.se, Some(m.to), step);
            }
            violations += audit_placement(&map, &nodes).len() as u64;
            if rng.gen_bool(0.15) {
                let node = nodes[rng.gen_range(0..lps)];
                dead.extend((0..lps as u32).map(LpId).filter(|lp| nodes[lp.index()] == node));
                ft.rereplicate = rng.gen();
                if on_crash(&mut map, &nodes, &dead, step, &ft).is_err() {
                    break;
                }
                violations += audit_placement(&map, &nodes).len() as u64;
                violations += map.all_copies().filter(|(_, lp)| dead.contains(lp)).count() as u64;
            }
        }
    }
    Ok(violations)
}

fn cost() -> Outcome {
    let three: Vec<(String, f64)> = (0..3).map(|i| (i.to_string(), 0.10)).collect();
    let up = cost_report(1800.0, &three, true, 1000).map_err(|e| e.to_string())?.total_cost;
    let exact = cost_report(1800.0, &three, false, 1000).map_err(|e| e.to_string())?.total_cost;
    let none = cost_report(1800.0, &[], true, 1000);
    if (up - 0.30).abs() > COST_EPS || (exact - 0.15).abs() > COST_EPS || none != Err(CostError::NoNodes) {
        return Err(format!("rounded {up}, unrounded {exact}, no nodes {none:?}"));
    }
    // The same through run artifacts: a run directory priced with a pinned WCT.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = scenario("groups.toml", &["horizon=4"]);
    let mut ex = run(&s)?;
    ex.outcome.wall_s = 1800.0;
    write_artifacts(dir.path(), &s, &ex).map_err(|e| e.to_string())?;
    let via_run = cost_of_run(dir.path(), &["*=0.10".into()], true).map_err(|e| e.to_string())?.total_cost;
    if (via_run - 0.30).abs() > COST_EPS {
        return Err(format!("run directory priced at {via_run}"));
    }
    Ok(format!("rounded {up:.2}, unrounded {exact:.2}, 0 nodes rejected"))
}

/// `compare` on saved artifacts: equal for matching protocols, divergent for another seed.
fn compare_artifacts() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut paths = Vec::new();
    for (name, o) in
        [("seq", vec!["sync.protocol=sequential"]), ("tw", vec!["sync.protocol=time-warp"]), ("seed2", vec!["seed=2"])]
    {
        let mut o = o;
        o.push("horizon=20");
        let s = scenario("reduced.toml", &o);
        let ex = run(&s)?;
        let p = dir.path().join(name);
        write_artifacts(&p, &s, &ex).map_err(|e| e.to_string())?;
        paths.push(p);
    }
    let same = compare_runs(&paths[0], &paths[1]).map_err(|e| e.to_string())?;
    let diff = compare_runs(&paths[0], &paths[2]).map_err(|e| e.to_string())?;
    match (&same, &diff) {
        (DigestComparison::Equal, DigestComparison::Diverged { .. }) => {
            Ok(format!("sequential = time-warp, other seed {diff:?}"))
        }
        _ => Err(format!("{same:?} / {diff:?}")),
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, o: Outcome| match o {
        Ok(d) => println!("PASS {name}: {d}"),
        Err(d) => {
            failed += 1;
            println!("FAIL {name}: {d}");
        }
    };
    report("causal equivalence", equivalence());
    report("digest comparison", compare_artifacts());
    match lcr_runs() {
        Ok(r) => {
            report("random allocation LCR", random_baseline(&r));
            report("stripes decay", stripes_decay(&r));
            report("adaptive recovery", adaptive(&r));
        }
        Err(e) => {
            for name in ["random allocation LCR", "stripes decay", "adaptive recovery"] {
                report(name, Err(e.clone()));
            }
        }
    }
    report("interaction group convergence", groups());
    report("CMB liveness and null accounting", cmb_ring());
    report("Time Warp rollback correctness", time_warp_slow());
    report("fault tolerance", fault_tolerance());
    report("cost report arithmetic", cost());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
