//! Step execution for the entities hosted by one LP.
//!
//! At step `t` an LP first delivers every message received for `t`, then runs
//! `on_step` for each hosted copy. Per copy the order is: `on_init` (step 0 only),
//! deliveries in ascending logical message id, `on_step` (skipped at the
//! horizon, which is a delivery-only step). Entities never observe each other
//! within a step, so this reproduces the sequential order no matter how copies
//! are spread over LPs.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{EntityCtx, Medium, ModelError, Outgoing, SendRules};
use crate::digest::state_hash;
use crate::ft::dedup::{Candidate, DedupState, Quarantined};
use crate::ids::{LogicalMsgId, LpId, SeId, VirtualTime};
use crate::message::{split_broadcast, Delivery, MsgKind, SimMessage};
use crate::model::ModelSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{lp} received a message for {se}, which it does not host")]
    Misrouted { lp: LpId, se: SeId },
    #[error("malformed broadcast payload from {0}")]
    MalformedBroadcast(SeId),
}

/// Migratable part of one hosted copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hosted {
    pub state: Vec<u8>,
    pub next_seq: u64,
}

/// One accepted delivery, for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub dst: SeId,
    pub src: SeId,
    pub logical: LogicalMsgId,
    pub src_lp: LpId,
    pub send_ts: VirtualTime,
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub outgoing: Vec<Outgoing>,
    pub deliveries: Vec<DeliveryRecord>,
    pub quarantined: Vec<Quarantined>,
    pub beyond_horizon: u64,
}

pub type Snapshot = BTreeMap<SeId, Hosted>;

pub struct LpExec {
    lp: LpId,
    model: Arc<ModelSpec>,
    seed: u64,
    rules: SendRules,
    hosted: BTreeMap<SeId, Hosted>,
    medium: Option<Box<dyn Medium>>,
    dedup: DedupState,
}

impl LpExec {
    pub fn new(lp: LpId, model: Arc<ModelSpec>, seed: u64, rules: SendRules, dedup: DedupState) -> Self {
        let medium = model.medium.as_ref().map(|f| f.create());
        LpExec { lp, model, seed, rules, hosted: BTreeMap::new(), medium, dedup }
    }

    pub fn lp(&self) -> LpId {
        self.lp
    }

    pub fn model(&self) -> &Arc<ModelSpec> {
        &self.model
    }

    pub fn rules(&self) -> SendRules {
        self.rules
    }

    pub fn dedup(&self) -> &DedupState {
        &self.dedup
    }

    pub fn host(&mut self, se: SeId, h: Hosted) {
        self.hosted.insert(se, h);
    }

    pub fn evict(&mut self, se: SeId) -> Option<Hosted> {
        self.hosted.remove(&se)
    }

    pub fn get(&self, se: SeId) -> Option<&Hosted> {
        self.hosted.get(&se)
    }

    pub fn hosts(&self, se: SeId) -> bool {
        self.hosted.contains_key(&se)
    }

    pub fn len(&self) -> usize {
        self.hosted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hosted.is_empty()
    }

    pub fn hosted(&self) -> impl Iterator<Item = (&SeId, &Hosted)> {
        self.hosted.iter()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.hosted.clone()
    }

    pub fn restore(&mut self, snap: &Snapshot) {
        self.hosted.clone_from(snap);
    }

    pub fn hashes(&self) -> Vec<(SeId, u64)> {
        self.hosted.iter().map(|(se, h)| (*se, state_hash(&h.state))).collect()
    }

    /// Positions of hosted copies, for models that expose one.
    pub fn positions(&self) -> Vec<(SeId, f64, f64)> {
        self.hosted
            .iter()
            .filter_map(|(se, h)| {
                let b = self.model.behavior(self.model.entities[se.entity.index()].behavior);
                b.position(&h.state).map(|(x, y)| (*se, x, y))
            })
            .collect()
    }

    /// Executes step `t` with `inputs`, the model and broadcast messages whose
    /// receive time is `t`.
    pub fn execute_step(&mut self, t: u64, inputs: &[SimMessage]) -> Result<StepOutput, ExecError> {
        let now = VirtualTime(t);
        let mut out = StepOutput::default();

        if inputs.iter().any(|m| m.kind == MsgKind::Broadcast) {
            if let Some(medium) = self.medium.as_mut() {
                let mut it = self.hosted.iter().map(|(se, h)| (*se, h.state.as_slice()));
                medium.rebuild(&mut it);
            }
        }

        let mut cands: Vec<Candidate> = Vec::new();
        let mut recipients = Vec::new();
        for (idx, msg) in inputs.iter().enumerate() {
            let cand = |dst| Candidate { dst, logical: msg.id.logical(), src_replica: msg.id.src.replica, idx };
            match msg.kind {
                MsgKind::Model => {
                    if !self.hosted.contains_key(&msg.dst) {
                        return Err(ExecError::Misrouted { lp: self.lp, se: msg.dst });
                    }
                    cands.push(cand(msg.dst));
                }
                MsgKind::Broadcast => {
                    let (scope, _) = split_broadcast(&msg.payload).ok_or(ExecError::MalformedBroadcast(msg.src))?;
                    recipients.clear();
                    if let Some(medium) = self.medium.as_ref() {
                        medium.resolve(scope, &mut recipients);
                    }
                    for se in &recipients {
                        if se.entity != msg.src.entity {
                            cands.push(cand(*se));
                        }
                    }
                }
                _ => {}
            }
        }
        cands.sort_unstable_by_key(Candidate::key);
        let accepted = self.dedup.filter(&cands, |i| inputs[i].payload.as_slice(), &mut out.quarantined);

        let model = &self.model;
        let mut next = accepted.iter().peekable();
        for (se, h) in self.hosted.iter_mut() {
            let behavior = model.behavior(model.entities[se.entity.index()].behavior);
            let mut ctx = EntityCtx::new(
                *se,
                now,
                self.seed,
                self.rules,
                &mut h.state,
                &mut h.next_seq,
                &mut out.outgoing,
                &mut out.beyond_horizon,
            );
            if t == 0 {
                behavior.on_init(&mut ctx)?;
            }
            while let Some(&&ci) = next.peek() {
                let c = &cands[ci];
                if c.dst > *se {
                    break;
                }
                next.next();
                if c.dst < *se {
                    // Only happens if the entity was evicted mid-batch, which the
                    // runtime never does.
                    continue;
                }
                let msg = &inputs[c.idx];
                let (broadcast, payload) = match msg.kind {
                    MsgKind::Broadcast => (true, split_broadcast(&msg.payload).unwrap().1),
                    _ => (false, msg.payload.as_slice()),
                };
                let d = Delivery {
                    id: msg.id,
                    src: msg.src.entity,
                    send_ts: msg.send_ts,
                    recv_ts: msg.recv_ts,
                    broadcast,
                    payload,
                };
                behavior.on_message(&mut ctx, &d)?;
                out.deliveries.push(DeliveryRecord {
                    dst: *se,
                    src: msg.src,
                    logical: c.logical,
                    src_lp: msg.src_lp,
                    send_ts: msg.send_ts,
                });
            }
            if now < self.rules.horizon {
                behavior.on_step(&mut ctx)?;
            }
        }
        Ok(out)
    }
}
