//! Single-threaded reference executor.
//!
//! Events are processed in non-decreasing timestamp order on one context with no
//! partitioning, queues or protocol machinery. Every parallel execution must
//! reproduce its trajectory digest exactly.

use std::collections::{BTreeMap, BTreeSet};

use crate::behavior::{EntityCtx, ModelError, Outgoing, SendRules, Target};
use crate::digest::{state_hash, DigestBuilder, DigestMode, EventFingerprint, TrajectoryDigest};
use crate::ids::{EntityId, LpId, SeId, VirtualTime};
use crate::message::{split_broadcast, Delivery};
use crate::model::ModelSpec;

#[derive(Debug, Clone)]
pub struct SequentialOutput {
    pub digest: TrajectoryDigest,
    pub fingerprint: EventFingerprint,
    pub sent: u64,
    pub delivered: u64,
    /// Final entity states, indexed by entity id.
    pub final_states: Vec<Vec<u8>>,
    pub beyond_horizon: u64,
    /// `(local, remote)` deliveries per send step under the observed placement.
    pub traffic: Vec<(u64, u64)>,
    /// Messages sent per step, filled alongside `traffic`.
    pub sent_per_step: Vec<u64>,
    /// Entity states at the start of each requested step, before its events.
    pub captured: BTreeMap<u64, Vec<Vec<u8>>>,
}

/// Optional observation of a sequential run. Neither affects the trajectory.
#[derive(Debug, Clone, Default)]
pub struct Observe<'a> {
    /// Static allocation used to classify deliveries as local or remote.
    pub placement: Option<&'a [LpId]>,
    pub capture: BTreeSet<u64>,
}

/// Runs steps `0..horizon` followed by a delivery-only step at `horizon`.
pub fn sequential_run(
    model: &ModelSpec,
    horizon: u64,
    seed: u64,
    mode: DigestMode,
) -> Result<SequentialOutput, ModelError> {
    sequential_run_observed(model, horizon, seed, mode, &Observe::default())
}

pub fn sequential_run_observed(
    model: &ModelSpec,
    horizon: u64,
    seed: u64,
    mode: DigestMode,
    observe: &Observe<'_>,
) -> Result<SequentialOutput, ModelError> {
    let n = model.entities.len();
    let mut states: Vec<Vec<u8>> = model.entities.iter().map(|e| e.initial_state.clone()).collect();
    let mut seqs = vec![0u64; n];
    let mut pending: BTreeMap<u64, Vec<Outgoing>> = BTreeMap::new();
    let mut medium = model.medium.as_ref().map(|f| f.create());
    let mut digest = DigestBuilder::new(mode, n);
    let mut fingerprint = EventFingerprint::default();
    let (mut sent, mut delivered, mut beyond) = (0u64, 0u64, 0u64);
    let rules = SendRules { floor: 1, protocol: "sequential", horizon: VirtualTime(horizon), entities: n as u64 };
    let mut outbox = Vec::new();
    let mut recipients = Vec::new();
    let mut traffic = vec![(0u64, 0u64); if observe.placement.is_some() { horizon.max(1) as usize } else { 0 }];
    let mut sent_per_step = vec![0u64; traffic.len()];
    let mut captured = BTreeMap::new();

    for t in 0..=horizon {
        let now = VirtualTime(t);
        let batch = pending.remove(&t).unwrap_or_default();
        if observe.capture.contains(&t) {
            captured.insert(t, states.clone());
        }

        if t == 0 {
            for (i, decl) in model.entities.iter().enumerate() {
                let mut ctx = EntityCtx::new(
                    SeId::primary(decl.id),
                    now,
                    seed,
                    rules,
                    &mut states[i],
                    &mut seqs[i],
                    &mut outbox,
                    &mut beyond,
                );
                model.behavior(decl.behavior).on_init(&mut ctx)?;
            }
        }

        // (receiver, message index) in delivery order.
        let mut deliveries: Vec<(EntityId, usize)> = Vec::new();
        if let Some(m) = medium.as_mut() {
            if batch.iter().any(|o| o.target == Target::Broadcast) {
                let mut it = states.iter().enumerate().map(|(i, s)| (SeId::primary(EntityId(i as u64)), s.as_slice()));
                m.rebuild(&mut it);
            }
        }
        for (idx, msg) in batch.iter().enumerate() {
            match msg.target {
                Target::Entity(dst) => deliveries.push((dst, idx)),
                Target::Broadcast => {
                    let (scope, _) = split_broadcast(&msg.payload)
                        .ok_or_else(|| ModelError::State("malformed broadcast payload".into()))?;
                    recipients.clear();
                    if let Some(m) = medium.as_ref() {
                        m.resolve(scope, &mut recipients);
                    }
                    for se in &recipients {
                        if se.entity != msg.id.src.entity {
                            deliveries.push((se.entity, idx));
                        }
                    }
                }
            }
        }
        deliveries.sort_by_key(|&(dst, idx)| (dst, batch[idx].id));

        for &(dst, idx) in &deliveries {
            let msg = &batch[idx];
            let (broadcast, payload) = match msg.target {
                Target::Broadcast => (true, split_broadcast(&msg.payload).unwrap().1),
                Target::Entity(_) => (false, msg.payload.as_slice()),
            };
            let d = Delivery {
                id: msg.id,
                src: msg.id.src.entity,
                send_ts: msg.send_ts,
                recv_ts: msg.recv_ts,
                broadcast,
                payload,
            };
            let i = dst.index();
            let decl = &model.entities[i];
            let mut ctx = EntityCtx::new(
                SeId::primary(dst),
                now,
                seed,
                rules,
                &mut states[i],
                &mut seqs[i],
                &mut outbox,
                &mut beyond,
            );
            model.behavior(decl.behavior).on_message(&mut ctx, &d)?;
            fingerprint.add(msg.id.logical(), dst, msg.recv_ts);
            delivered += 1;
            if let (Some(p), Some(row)) = (observe.placement, traffic.get_mut(msg.send_ts.0 as usize)) {
                if p[dst.index()] == p[msg.id.src.entity.index()] {
                    row.0 += 1;
                } else {
                    row.1 += 1;
                }
            }
        }

        if t < horizon {
            for (i, decl) in model.entities.iter().enumerate() {
                let mut ctx = EntityCtx::new(
                    SeId::primary(decl.id),
                    now,
                    seed,
                    rules,
                    &mut states[i],
                    &mut seqs[i],
                    &mut outbox,
                    &mut beyond,
                );
                model.behavior(decl.behavior).on_step(&mut ctx)?;
            }
        }

        if let Some(n) = sent_per_step.get_mut(t as usize) {
            *n += outbox.len() as u64;
        }
        for out in outbox.drain(..) {
            sent += 1;
            pending.entry(out.recv_ts.0).or_default().push(out);
        }
        for (i, s) in states.iter().enumerate() {
            digest.record(t, EntityId(i as u64), state_hash(s));
        }
    }

    Ok(SequentialOutput {
        digest: digest.finish(),
        fingerprint,
        sent,
        delivered,
        final_states: states,
        beyond_horizon: beyond,
        traffic,
        sent_per_step,
        captured,
    })
}
