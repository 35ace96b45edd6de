//! Conservative (Chandy-Misra-Bryant) input queues.
//!
//! One FIFO per upstream LP. Channels carry non-decreasing receive times, so the
//! largest timestamp seen on a channel, model message or null, bounds everything
//! that channel will still deliver.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::ids::{LpId, VirtualTime};
use crate::message::{MsgKind, SimMessage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CmbError {
    #[error("message from {from} with receive time {ts} behind channel bound {bound}")]
    OutOfOrder { from: LpId, ts: u64, bound: u64 },
    #[error("{0} is not an upstream LP")]
    UnknownUpstream(LpId),
}

#[derive(Debug, Clone, Default)]
struct Channel {
    msgs: VecDeque<SimMessage>,
    /// Nothing with a smaller receive time will arrive on this channel.
    bound: VirtualTime,
    last_null: Option<VirtualTime>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextSafe {
    /// The minimal pending event, removed from its queue.
    Event(SimMessage),
    /// No event can be proven safe until these queues advance.
    Blocked(Vec<LpId>),
}

/// Event order used everywhere: receive time, then source LP, then message id.
fn order_key(m: &SimMessage) -> (VirtualTime, LpId, crate::ids::MsgId) {
    (m.recv_ts, m.src_lp, m.id)
}

#[derive(Debug, Clone, Default)]
pub struct InboundQueueSet {
    queues: BTreeMap<LpId, Channel>,
}

impl InboundQueueSet {
    pub fn new(upstream: impl IntoIterator<Item = LpId>) -> Self {
        InboundQueueSet { queues: upstream.into_iter().map(|lp| (lp, Channel::default())).collect() }
    }

    pub fn upstream(&self) -> impl Iterator<Item = LpId> + '_ {
        self.queues.keys().copied()
    }

    /// Appends a model or null message arriving from `from`.
    pub fn push(&mut self, from: LpId, msg: SimMessage) -> Result<(), CmbError> {
        let q = self.queues.get_mut(&from).ok_or(CmbError::UnknownUpstream(from))?;
        let last_model = q.msgs.back().map(|m| m.recv_ts).unwrap_or(VirtualTime::ZERO);
        let floor = q.last_null.unwrap_or(VirtualTime::ZERO).max(last_model);
        if msg.recv_ts < floor {
            return Err(CmbError::OutOfOrder { from, ts: msg.recv_ts.0, bound: floor.0 });
        }
        q.bound = q.bound.max(msg.recv_ts);
        match msg.kind {
            MsgKind::Null => q.last_null = Some(msg.recv_ts),
            _ => q.msgs.push_back(msg),
        }
        Ok(())
    }

    pub fn bound(&self, from: LpId) -> Option<VirtualTime> {
        self.queues.get(&from).map(|q| q.bound)
    }

    pub fn last_null(&self, from: LpId) -> Option<VirtualTime> {
        self.queues.get(&from).and_then(|q| q.last_null)
    }

    /// Classic single-event rule. `local` holds events this LP scheduled for
    /// itself; they never need a bound.
    ///
    /// The candidate is the minimum over queue heads and local events. It is safe
    /// if every empty queue is bounded beyond it: by a larger timestamp, or by an
    /// equal one from an LP that sorts after the candidate's source.
    pub fn next_safe(&mut self, local: &mut Vec<SimMessage>) -> NextSafe {
        enum From {
            Queue(LpId),
            Local(usize),
        }
        let mut best: Option<(From, &SimMessage)> = None;
        for (lp, q) in &self.queues {
            if let Some(h) = q.msgs.front() {
                if best.as_ref().is_none_or(|(_, b)| order_key(h) < order_key(b)) {
                    best = Some((From::Queue(*lp), h));
                }
            }
        }
        for (i, m) in local.iter().enumerate() {
            if best.as_ref().is_none_or(|(_, b)| order_key(m) < order_key(b)) {
                best = Some((From::Local(i), m));
            }
        }
        let Some((from, cand)) = best else {
            return NextSafe::Blocked(self.queues.keys().copied().collect());
        };
        let (t, src) = (cand.recv_ts, cand.src_lp);
        let lagging: Vec<LpId> = self
            .queues
            .iter()
            .filter(|(lp, q)| q.msgs.is_empty() && !(q.bound > t || (q.bound == t && **lp > src)))
            .map(|(lp, _)| *lp)
            .collect();
        if !lagging.is_empty() {
            return NextSafe::Blocked(lagging);
        }
        NextSafe::Event(match from {
            From::Queue(lp) => self.queues.get_mut(&lp).unwrap().msgs.pop_front().unwrap(),
            From::Local(i) => local.remove(i),
        })
    }

    /// Step-batch rule: step `t` may execute once every upstream channel is
    /// bounded beyond `t`.
    pub fn step_ready(&self, t: u64) -> bool {
        self.queues.values().all(|q| q.bound.0 > t)
    }

    /// Upstream LPs not yet bounded beyond `t`.
    pub fn lagging(&self, t: u64) -> Vec<LpId> {
        self.queues.iter().filter(|(_, q)| q.bound.0 <= t).map(|(lp, _)| *lp).collect()
    }

    /// Removes every queued message for step `t`. Earlier messages must already
    /// be gone.
    pub fn drain_step(&mut self, t: u64, out: &mut Vec<SimMessage>) {
        for q in self.queues.values_mut() {
            while q.msgs.front().is_some_and(|m| m.recv_ts.0 <= t) {
                let m = q.msgs.pop_front().unwrap();
                debug_assert_eq!(m.recv_ts.0, t, "queued message skipped a step");
                out.push(m);
            }
        }
    }

    /// Removes queued messages addressed to a copy that is leaving this LP.
    pub fn take_for(&mut self, dst: crate::ids::SeId) -> Vec<SimMessage> {
        let mut out = Vec::new();
        for q in self.queues.values_mut() {
            let (keep, take): (VecDeque<_>, VecDeque<_>) =
                q.msgs.drain(..).partition(|m| m.kind != MsgKind::Model || m.dst != dst);
            q.msgs = keep;
            out.extend(take);
        }
        out
    }

    pub fn queued(&self) -> usize {
        self.queues.values().map(|q| q.msgs.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{EntityId, MsgId, SeId};

    fn model(src_lp: u32, ts: u64, seq: u64) -> SimMessage {
        let se = SeId::primary(EntityId(src_lp as u64));
        SimMessage {
            id: MsgId { src: se, seq },
            kind: MsgKind::Model,
            src: se,
            dst: SeId::primary(EntityId(99)),
            src_lp: LpId(src_lp),
            dst_lp: LpId(9),
            send_ts: VirtualTime(ts.saturating_sub(1)),
            recv_ts: VirtualTime(ts),
            payload: vec![],
        }
    }

    fn null(src_lp: u32, ts: u64) -> SimMessage {
        SimMessage::null(LpId(src_lp), LpId(9), VirtualTime(ts - 1), VirtualTime(ts))
    }

    #[test]
    fn minimum_head_is_selected() {
        let mut q = InboundQueueSet::new([LpId(0), LpId(1), LpId(2)]);
        q.push(LpId(0), model(0, 5, 0)).unwrap();
        q.push(LpId(1), model(1, 7, 0)).unwrap();
        q.push(LpId(2), model(2, 3, 0)).unwrap();
        match q.next_safe(&mut vec![]) {
            NextSafe::Event(m) => assert_eq!((m.recv_ts.0, m.src_lp), (3, LpId(2))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_queue_blocks() {
        let mut q = InboundQueueSet::new([LpId(0), LpId(1), LpId(2)]);
        q.push(LpId(0), model(0, 5, 0)).unwrap();
        q.push(LpId(2), model(2, 3, 0)).unwrap();
        assert_eq!(q.next_safe(&mut vec![]), NextSafe::Blocked(vec![LpId(1)]));
    }

    #[test]
    fn null_bound_unblocks() {
        let mut q = InboundQueueSet::new([LpId(0), LpId(1), LpId(2)]);
        q.push(LpId(0), model(0, 5, 0)).unwrap();
        q.push(LpId(1), null(1, 9)).unwrap();
        q.push(LpId(2), model(2, 9, 0)).unwrap();
        match q.next_safe(&mut vec![]) {
            NextSafe::Event(m) => assert_eq!(m.recv_ts.0, 5),
            other => panic!("{other:?}"),
        }
        assert_eq!(q.last_null(LpId(1)), Some(VirtualTime(9)));
    }

    #[test]
    fn regressing_channel_is_rejected() {
        let mut q = InboundQueueSet::new([LpId(0)]);
        q.push(LpId(0), null(0, 9)).unwrap();
        assert!(matches!(q.push(LpId(0), model(0, 4, 0)), Err(CmbError::OutOfOrder { .. })));
    }

    #[test]
    fn step_batches_need_bounds_past_the_step() {
        let mut q = InboundQueueSet::new([LpId(0), LpId(1)]);
        q.push(LpId(0), model(0, 1, 0)).unwrap();
        q.push(LpId(0), model(0, 1, 1)).unwrap();
        q.push(LpId(1), null(1, 1)).unwrap();
        assert!(!q.step_ready(1));
        assert_eq!(q.lagging(1), vec![LpId(0), LpId(1)]);
        q.push(LpId(0), null(0, 2)).unwrap();
        q.push(LpId(1), null(1, 2)).unwrap();
        assert!(q.step_ready(1));
        let mut out = vec![];
        q.drain_step(1, &mut out);
        assert_eq!(out.len(), 2);
        assert_eq!(q.queued(), 0);
    }
}
