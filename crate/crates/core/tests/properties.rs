use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use padsim_core::behavior::{Behavior, EntityCtx, ModelResult, SendRules};
use padsim_core::exec::{Hosted, LpExec};
use padsim_core::ft::dedup::DedupState;
use padsim_core::ft::{audit_placement, ft_migration_filter, on_crash, replicated_map, FtMode, FtParams};
use padsim_core::ids::MsgId;
use padsim_core::message::{MsgKind, SimMessage};
use padsim_core::migration::{reconcile_among, MigrationParams, Proposal};
use padsim_core::sync::cmb::InboundQueueSet;
use padsim_core::sync::tw::TimeWarp;
use padsim_core::transport::{connect_mesh, Faults, Inbound, Injection, LatencySpec, TransportConfig};
use padsim_core::{EntityId, LpId, NodeId, SeId, SimBuilder, VirtualTime};
use proptest::prelude::*;

fn model_msg(src_lp: u32, dst_lp: u32, src: u64, seq: u64, dst: u64, recv: u64) -> SimMessage {
    let src = SeId::primary(EntityId(src));
    SimMessage {
        id: MsgId { src, seq },
        kind: MsgKind::Model,
        src,
        dst: SeId::primary(EntityId(dst)),
        src_lp: LpId(src_lp),
        dst_lp: LpId(dst_lp),
        send_ts: VirtualTime(recv.saturating_sub(1)),
        recv_ts: VirtualTime(recv),
        payload: seq.to_le_bytes().to_vec(),
    }
}

// Conservative queues: a step batch never misses a message, however the
// channels interleave.

fn channel() -> impl Strategy<Value = Vec<(u64, bool)>> {
    prop::collection::vec((0u64..3, prop::bool::weighted(0.3)), 0..25)
}

proptest! {
    #[test]
    fn cmb_batches_equal_brute_force(
        chans in prop::collection::vec(channel(), 1..4),
        order in prop::collection::vec(0usize..4, 0..200),
    ) {
        const H: u64 = 40;
        let mut feeds: Vec<Vec<SimMessage>> = Vec::new();
        let mut all: BTreeMap<u64, BTreeSet<(u32, u64)>> = BTreeMap::new();
        for (c, items) in chans.iter().enumerate() {
            let mut ts = 1;
            let mut feed = Vec::new();
            for (seq, &(delta, null)) in items.iter().enumerate() {
                ts += delta;
                if null {
                    feed.push(SimMessage::null(LpId(c as u32), LpId(9), VirtualTime(ts - 1), VirtualTime(ts)));
                } else {
                    feed.push(model_msg(c as u32, 9, c as u64, seq as u64, 0, ts));
                    if ts <= H {
                        all.entry(ts).or_default().insert((c as u32, seq as u64));
                    }
                }
            }
            feed.push(SimMessage::null(LpId(c as u32), LpId(9), VirtualTime(ts), VirtualTime(H + 1)));
            feeds.push(feed);
        }
        let mut q = InboundQueueSet::new((0..chans.len() as u32).map(LpId));
        let mut cursor = vec![0usize; feeds.len()];
        let mut clock = 0;
        let empty = BTreeSet::new();
        let check = |q: &mut InboundQueueSet, clock: &mut u64| -> Result<(), TestCaseError> {
            while *clock <= H && q.step_ready(*clock) {
                let mut batch = Vec::new();
                q.drain_step(*clock, &mut batch);
                let got: BTreeSet<(u32, u64)> = batch.iter().map(|m| (m.src_lp.0, m.id.seq)).collect();
                prop_assert_eq!(&got, all.get(clock).unwrap_or(&empty));
                *clock += 1;
            }
            Ok(())
        };
        for c in order {
            let c = c % feeds.len();
            if cursor[c] < feeds[c].len() {
                q.push(LpId(c as u32), feeds[c][cursor[c]].clone()).unwrap();
                cursor[c] += 1;
            }
            check(&mut q, &mut clock)?;
        }
        for c in 0..feeds.len() {
            while cursor[c] < feeds[c].len() {
                q.push(LpId(c as u32), feeds[c][cursor[c]].clone()).unwrap();
                cursor[c] += 1;
                check(&mut q, &mut clock)?;
            }
        }
        prop_assert_eq!(clock, H + 1);
    }
}

// Time Warp: arrival order, stragglers and cancellations never change the
// committed trajectory.

struct Fold;

impl Behavior for Fold {
    fn on_step(&self, ctx: &mut EntityCtx<'_>) -> ModelResult {
        let s = ctx.state_mut();
        s[0] = s[0].wrapping_mul(31).wrapping_add(1);
        Ok(())
    }

    fn on_message(&self, ctx: &mut EntityCtx<'_>, msg: &padsim_core::message::Delivery<'_>) -> ModelResult {
        let s = ctx.state_mut();
        s[0] = s[0].wrapping_mul(7) ^ msg.payload[0] ^ (msg.src.0 as u8);
        Ok(())
    }
}

fn fold_exec() -> LpExec {
    let mut b = SimBuilder::new(2);
    let h = b.register_behavior("fold", Arc::new(Fold)).unwrap();
    for i in 0..8u32 {
        b.create_entity(h, vec![i as u8], LpId(i / 4)).unwrap();
    }
    let sim = b.build().unwrap();
    let model = Arc::new(sim.model);
    let rules = SendRules { floor: 1, protocol: "time-warp", horizon: VirtualTime(30), entities: 8 };
    let mut exec = LpExec::new(LpId(0), model, 5, rules, DedupState::disabled());
    for e in 0..4 {
        exec.host(SeId::primary(EntityId(e)), Hosted { state: vec![e as u8], next_seq: 0 });
    }
    exec
}

#[derive(Debug, Clone)]
struct Arrival {
    src: u64,
    dst: u64,
    recv: u64,
    cancelled: bool,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn time_warp_commits_the_in_order_trajectory(
        arrivals in prop::collection::vec((4u64..8, 0u64..4, 1u64..=30, prop::bool::weighted(0.2)), 0..60),
        ops in prop::collection::vec(0u8..4, 0..300),
        shuffle in prop::collection::vec(any::<prop::sample::Index>(), 0..60),
        cp in 1u64..6,
    ) {
        const H: u64 = 30;
        let arrivals: Vec<Arrival> = arrivals
            .into_iter()
            .map(|(src, dst, recv, cancelled)| Arrival { src, dst, recv, cancelled })
            .collect();
        let msgs: Vec<SimMessage> = arrivals
            .iter()
            .enumerate()
            .map(|(i, a)| model_msg(1, 0, a.src, i as u64, a.dst, a.recv))
            .collect();

        // Reference: deliver surviving messages in step order.
        let mut reference = fold_exec();
        let mut want = Vec::new();
        for t in 0..=H {
            let batch: Vec<SimMessage> = msgs
                .iter()
                .zip(&arrivals)
                .filter(|(m, a)| m.recv_ts.0 == t && !a.cancelled)
                .map(|(m, _)| m.clone())
                .collect();
            reference.execute_step(t, &batch).unwrap();
            want.push(reference.hashes());
        }

        // Wire: every positive, plus an anti for each cancelled one after it
        // (or, sometimes, overtaking it).
        let mut wire: Vec<SimMessage> = Vec::new();
        for (m, a) in msgs.iter().zip(&arrivals) {
            wire.push(m.clone());
            if a.cancelled {
                wire.push(m.anti());
            }
        }
        for (i, ix) in shuffle.iter().enumerate() {
            if wire.is_empty() {
                break;
            }
            let n = wire.len();
            wire.swap(i % n, ix.index(n));
        }

        let mut tw = TimeWarp::new(fold_exec(), H, cp);
        let mut got = Vec::new();
        let mut next = 0;
        let mut sink = Vec::new();
        let step = |tw: &mut TimeWarp, got: &mut Vec<_>, next: usize| {
            let pending_min = wire[next..].iter().map(|m| m.recv_ts.0).min().unwrap_or(u64::MAX);
            let g = tw.lvt().min(pending_min);
            if g > tw.gvt() {
                got.extend(tw.commit(g));
            }
        };
        for op in ops {
            match op {
                0 | 1 if next < wire.len() => {
                    tw.receive(wire[next].clone(), &mut sink).unwrap();
                    next += 1;
                }
                2 if tw.can_execute() => {
                    tw.execute_next(&mut |_| Vec::new(), false, &mut sink).unwrap();
                }
                _ => step(&mut tw, &mut got, next),
            }
        }
        while next < wire.len() {
            tw.receive(wire[next].clone(), &mut sink).unwrap();
            next += 1;
        }
        while tw.can_execute() {
            tw.execute_next(&mut |_| Vec::new(), false, &mut sink).unwrap();
        }
        got.extend(tw.commit(H + 1));
        prop_assert_eq!(got.len() as u64, H + 1);
        for rec in &got {
            prop_assert_eq!(&rec.hashes, &want[rec.step as usize], "step {}", rec.step);
        }
        prop_assert_eq!(tw.pending_antis(), 0);
    }
}

// Replica placement: no copy of an entity ever shares an LP or a node with
// another copy, through initial placement, migrations and crashes.

/// Proposed moves `(entity, replica, to)`, an optional node to crash, and
/// whether lost copies are recreated.
type Round = (Vec<(u64, u16, u32)>, Option<u32>, bool);

#[derive(Debug, Clone)]
struct Scenario {
    nodes: Vec<NodeId>,
    replicas: usize,
    placement: Vec<LpId>,
    rounds: Vec<Round>,
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (2usize..=8)
        .prop_flat_map(|lps| {
            let nodes = prop::collection::vec(0u32..lps as u32, lps);
            (Just(lps), nodes, 1usize..=3, 1usize..16)
        })
        .prop_flat_map(|(lps, nodes, r, entities)| {
            let distinct = nodes.iter().collect::<BTreeSet<_>>().len();
            let r = r.min(distinct);
            let placement = prop::collection::vec((0..lps as u32).prop_map(LpId), entities);
            let moves = prop::collection::vec((0..entities as u64, 0..r as u16, 0..lps as u32), 0..12);
            let round = (moves, prop::option::weighted(0.15, 0..lps as u32), any::<bool>());
            let rounds = prop::collection::vec(round, 0..5);
            (Just(nodes.into_iter().map(NodeId).collect::<Vec<_>>()), Just(r), placement, rounds)
        })
        .prop_map(|(nodes, replicas, placement, rounds)| Scenario { nodes, replicas, placement, rounds })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]
    #[test]
    fn replicas_never_share_an_lp_or_node(s in scenario()) {
        let lps = s.nodes.len();
        let mut ft = FtParams { enabled: true, replicas: s.replicas, mode: FtMode::Crash, ..Default::default() };
        let mut map = replicated_map(&s.placement, &s.nodes, &ft).unwrap();
        prop_assert!(audit_placement(&map, &s.nodes).is_empty());
        let p = MigrationParams { enabled: true, balance_band: 1.0, ..Default::default() };
        let mut dead: BTreeSet<LpId> = BTreeSet::new();
        for (step, (moves, crash, rereplicate)) in s.rounds.iter().enumerate() {
            let step = step as u64 + 1;
            let proposals: Vec<Proposal> = moves
                .iter()
                .filter_map(|&(e, r, to)| {
                    let se = SeId::new(EntityId(e), r);
                    let from = map.owner(se)?;
                    let to = LpId(to);
                    (from != to && !dead.contains(&to)).then_some(Proposal { se, from, to, score: 1.0 })
                })
                .collect();
            let alive: Vec<bool> = (0..lps as u32).map(|i| !dead.contains(&LpId(i))).collect();
            let filter = |m: &[Proposal]| ft_migration_filter(m, &map, &s.nodes);
            let plan = reconcile_among(step, proposals, map.roster_sizes(), &alive, &p, Some(&filter));
            for m in &plan.moves {
                map.set_owner(m.se, Some(m.to), step);
            }
            prop_assert!(audit_placement(&map, &s.nodes).is_empty(), "after moves {:?}", plan.moves);

            if let Some(c) = crash {
                let node = s.nodes[*c as usize];
                let newly: BTreeSet<LpId> =
                    (0..lps as u32).map(LpId).filter(|lp| s.nodes[lp.index()] == node).collect();
                dead.extend(newly.iter().copied());
                ft.rereplicate = *rereplicate;
                if on_crash(&mut map, &s.nodes, &dead, step, &ft).is_err() {
                    break;
                }
                prop_assert!(audit_placement(&map, &s.nodes).is_empty(), "after crash of {}", node);
                prop_assert!(map.all_copies().all(|(_, lp)| !dead.contains(&lp)));
            }
        }
    }
}

// Transport: per-link FIFO holds under random injected latency.

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn links_stay_fifo_under_latency(
        sends in prop::collection::vec((0u32..3, 0u32..3), 1..150),
        max_ms in 0.0f64..1.5,
    ) {
        let faults = Arc::new(Faults::none(3));
        faults.inject(Injection::Latency(LatencySpec::UniformMs(0.0, max_ms))).unwrap();
        let mut eps = connect_mesh(3, &TransportConfig::default(), faults).unwrap().into_endpoints();
        let mut expected: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        for (seq, &(a, b)) in sends.iter().enumerate() {
            if a == b {
                continue;
            }
            let m = model_msg(a, b, a as u64, seq as u64, b as u64, 1);
            eps[a as usize].send(m).unwrap();
            expected.entry((a, b)).or_default().push(seq as u64);
        }
        for ep in eps.iter_mut() {
            ep.flush().unwrap();
        }
        let mut got: BTreeMap<(u32, u32), Vec<u64>> = BTreeMap::new();
        let deadline = Instant::now() + Duration::from_secs(5);
        for (b, ep) in eps.iter_mut().enumerate() {
            let want: usize = expected.iter().filter(|((_, d), _)| *d == b as u32).map(|(_, v)| v.len()).sum();
            let mut n = 0;
            while n < want {
                match ep.recv_deadline(Some(deadline)).unwrap() {
                    Some(Inbound::Frame(m)) => {
                        got.entry((m.src_lp.0, b as u32)).or_default().push(m.id.seq);
                        n += 1;
                    }
                    Some(other) => prop_assert!(false, "unexpected {:?}", other),
                    None => prop_assert!(false, "timed out with {} of {} frames", n, want),
                }
            }
        }
        prop_assert_eq!(got, expected);
    }
}
