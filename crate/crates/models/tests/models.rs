use std::sync::Arc;

use padsim_core::digest::{DigestComparison, DigestMode};
use padsim_core::migration::MigrationParams;
use padsim_core::sequential::sequential_run;
use padsim_core::sync::{ProtocolKind, SyncParams};
use padsim_core::transport::Faults;
use padsim_core::{run_parallel, EntityId, RunConfig, SeId};
use padsim_models::grid::{brute_force_within, torus_distance, SpatialGrid};
use padsim_models::mobile::{initial_states, MhState};
use padsim_models::{groups, groups_model, idle_model, mobile_hosts, Allocation, MhParams};
use proptest::prelude::*;

fn unpack(mut v: Vec<SeId>) -> Vec<SeId> {
    v.sort();
    v
}

proptest! {
    #[test]
    fn grid_matches_brute_force(
        side in 10.0f64..5000.0,
        radius_frac in 0.0f64..0.49,
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..200),
        q in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let radius = side * radius_frac;
        let points: Vec<(SeId, f64, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, (x, y))| (SeId::primary(EntityId(i as u64)), x * side, y * side))
            .collect();
        let mut g = SpatialGrid::new(side, radius);
        for &(id, x, y) in &points {
            g.insert(id, x, y);
        }
        let mut got = Vec::new();
        g.neighbors_within(q.0 * side, q.1 * side, &mut got);
        let want = brute_force_within(&points, q.0 * side, q.1 * side, radius, side);
        prop_assert_eq!(unpack(got), unpack(want));
    }

    #[test]
    fn torus_distance_is_symmetric_and_bounded(
        side in 1.0f64..10000.0,
        a in (0.0f64..1.0, 0.0f64..1.0),
        b in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let pa = (a.0 * side, a.1 * side);
        let pb = (b.0 * side, b.1 * side);
        let d = torus_distance(pa, pb, side);
        prop_assert!((d - torus_distance(pb, pa, side)).abs() < 1e-9);
        prop_assert!(d <= side * std::f64::consts::FRAC_1_SQRT_2 + 1e-9);
    }
}

#[test]
fn density_gives_about_twenty_neighbors() {
    let p = MhParams::default();
    let states = initial_states(&p, 5);
    let mut g = SpatialGrid::new(p.side, p.radius);
    for (i, s) in states.iter().enumerate() {
        g.insert(SeId::primary(EntityId(i as u64)), s.x, s.y);
    }
    let mut total = 0usize;
    let mut out = Vec::new();
    for s in &states {
        out.clear();
        g.neighbors_within(s.x, s.y, &mut out);
        total += out.len() - 1;
    }
    // pi * 250^2 * 9998 / 10^8 ≈ 19.63
    let mean = total as f64 / states.len() as f64;
    assert!((mean - 19.63).abs() < 19.63 * 0.05, "{mean}");
}

#[test]
fn about_a_fifth_of_hosts_ping_each_step() {
    let p = MhParams { n_hosts: 9999, ..Default::default() };
    let sim = mobile_hosts(&p, 1, Allocation::Random, 3).unwrap();
    let out = sequential_run(&sim.model, 1, 3, DigestMode::Summary).unwrap();
    let pings: u64 = out.final_states.iter().map(|s| MhState::decode(s).unwrap().sent).sum();
    // Binomial(9999, 0.2): mean 2000, sd 40.
    assert!((1850..=2150).contains(&pings), "{pings}");
}

#[test]
fn zero_radius_delivers_nothing() {
    let p = MhParams { n_hosts: 500, side: 1000.0, radius: 0.0, ..Default::default() };
    let sim = mobile_hosts(&p, 2, Allocation::Stripes, 1).unwrap();
    let out = run_parallel(&sim, &RunConfig { horizon: 10, ..Default::default() }, Arc::new(Faults::none(2))).unwrap();
    assert_eq!(out.totals().delivered, 0);
}

#[test]
fn stripes_start_with_mostly_local_traffic() {
    let p = MhParams { n_hosts: 999, side: 3162.0, ..Default::default() };
    let sim = mobile_hosts(&p, 3, Allocation::Stripes, 1).unwrap();
    let states = initial_states(&p, 1);
    for (s, lp) in states.iter().zip(&sim.placement) {
        assert_eq!(*lp, padsim_models::mobile::stripe_of(s.x, p.side, 3));
    }
    let out = run_parallel(&sim, &RunConfig { horizon: 5, ..Default::default() }, Arc::new(Faults::none(3))).unwrap();
    assert!(out.rows[0].lcr().unwrap() > 60.0);
}

#[test]
fn mobile_hosts_match_sequential_under_every_protocol() {
    let p = MhParams { n_hosts: 300, side: 1700.0, ..Default::default() };
    let sim = mobile_hosts(&p, 3, Allocation::Random, 9).unwrap();
    let want = sequential_run(&sim.model, 40, 9, DigestMode::Full).unwrap().digest;
    for protocol in [ProtocolKind::TimeStepped, ProtocolKind::Cmb, ProtocolKind::TimeWarp] {
        let cfg = RunConfig {
            horizon: 40,
            seed: 9,
            sync: SyncParams { protocol, ..Default::default() },
            gaia: MigrationParams { enabled: true, eval_every: 8, window: 8, ..Default::default() },
            ..Default::default()
        };
        let out = run_parallel(&sim, &cfg, Arc::new(Faults::none(3))).unwrap();
        assert_eq!(out.digest.unwrap().compare(&want), DigestComparison::Equal, "{protocol}");
    }
}

#[test]
fn groups_converge_at_the_first_fence() {
    let sim = groups_model().unwrap();
    let cfg =
        RunConfig { horizon: 64, gaia: MigrationParams { enabled: true, ..Default::default() }, ..Default::default() };
    let out = run_parallel(&sim, &cfg, Arc::new(Faults::none(3))).unwrap();
    let e = cfg.gaia.eval_every as usize;
    assert!(out.rows[e - 1].lcr().unwrap() < 100.0);
    for row in &out.rows[e + 1..] {
        assert_eq!(row.lcr(), Some(100.0), "step {}", row.step);
    }
    let mut moved: Vec<u64> = out.migrations.iter().map(|m| m.entity.entity.0 + 1).collect();
    moved.sort();
    assert_eq!(moved, vec![5, 9, 10]);
    assert_eq!(out.rows.last().unwrap().rosters, vec![4, 3, 3]);
    let _ = groups::converged_placement();
}

#[test]
fn idle_model_sends_nothing() {
    let sim = idle_model(3, 2).unwrap();
    let out = run_parallel(&sim, &RunConfig { horizon: 20, ..Default::default() }, Arc::new(Faults::none(3))).unwrap();
    assert_eq!(out.totals().sent, 0);
}
