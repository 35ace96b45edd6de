use serde::{Deserialize, Serialize};

use crate::ids::{EntityId, LpId, MsgId, SeId, VirtualTime};

/// Wire discriminant of a [`SimMessage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MsgKind {
    /// Point-to-point model interaction.
    Model = 0,
    /// Timestamp promise used by the conservative protocol; no content.
    Null = 1,
    /// Cancels exactly one earlier `Model` or `Broadcast` message with the same header.
    Anti = 2,
    /// Runtime coordination (barriers, GVT rounds, migration, reports). Payload is a
    /// serialized control body.
    Control = 3,
    /// Area broadcast: sent once to every LP, each LP resolves its own recipients.
    Broadcast = 4,
}

impl MsgKind {
    pub fn from_u8(v: u8) -> Option<MsgKind> {
        Some(match v {
            0 => MsgKind::Model,
            1 => MsgKind::Null,
            2 => MsgKind::Anti,
            3 => MsgKind::Control,
            4 => MsgKind::Broadcast,
            _ => return None,
        })
    }

    /// True for messages that carry model traffic (and count towards LCR).
    pub fn is_model_traffic(self) -> bool {
        matches!(self, MsgKind::Model | MsgKind::Broadcast)
    }
}

/// The unit exchanged between LPs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimMessage {
    pub id: MsgId,
    pub kind: MsgKind,
    pub src: SeId,
    /// `SeId::ANY` for broadcasts, nulls and control traffic.
    pub dst: SeId,
    pub src_lp: LpId,
    pub dst_lp: LpId,
    pub send_ts: VirtualTime,
    pub recv_ts: VirtualTime,
    pub payload: Vec<u8>,
}

impl SimMessage {
    pub fn null(src_lp: LpId, dst_lp: LpId, now: VirtualTime, promise: VirtualTime) -> Self {
        SimMessage {
            id: MsgId::NONE,
            kind: MsgKind::Null,
            src: SeId::ANY,
            dst: SeId::ANY,
            src_lp,
            dst_lp,
            send_ts: now,
            recv_ts: promise,
            payload: Vec::new(),
        }
    }

    pub fn control(src_lp: LpId, dst_lp: LpId, now: VirtualTime, body: Vec<u8>) -> Self {
        SimMessage {
            id: MsgId::NONE,
            kind: MsgKind::Control,
            src: SeId::ANY,
            dst: SeId::ANY,
            src_lp,
            dst_lp,
            send_ts: now,
            recv_ts: now,
            payload: body,
        }
    }

    /// The anti-message that annihilates `self`.
    pub fn anti(&self) -> SimMessage {
        SimMessage { kind: MsgKind::Anti, payload: Vec::new(), ..self.clone() }
    }

    /// Key under which a receiver stores the message; an anti-message maps to the
    /// same key as its positive counterpart.
    pub fn key(&self) -> MessageKey {
        MessageKey { recv_ts: self.recv_ts, id: self.id, dst: self.dst }
    }
}

/// Receiver-side identity of a physical message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageKey {
    pub recv_ts: VirtualTime,
    pub id: MsgId,
    pub dst: SeId,
}

impl MessageKey {
    /// Smallest key with the given receive time, for range scans.
    pub fn lowest(recv_ts: VirtualTime) -> MessageKey {
        let se = SeId::new(EntityId(0), 0);
        MessageKey { recv_ts, id: MsgId { src: se, seq: 0 }, dst: se }
    }
}

/// Splits a broadcast payload into `(scope, body)`.
///
/// Layout: `scope_len: u32 LE`, `scope`, `body`.
pub fn split_broadcast(payload: &[u8]) -> Option<(&[u8], &[u8])> {
    let len_bytes: [u8; 4] = payload.get(..4)?.try_into().ok()?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let scope = payload.get(4..4 + len)?;
    Some((scope, &payload[4 + len..]))
}

pub fn join_broadcast(scope: &[u8], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + scope.len() + body.len());
    out.extend_from_slice(&(scope.len() as u32).to_le_bytes());
    out.extend_from_slice(scope);
    out.extend_from_slice(body);
    out
}

/// What a model callback sees for one delivered message.
#[derive(Debug, Clone, Copy)]
pub struct Delivery<'a> {
    pub id: MsgId,
    pub src: EntityId,
    pub send_ts: VirtualTime,
    pub recv_ts: VirtualTime,
    pub broadcast: bool,
    pub payload: &'a [u8],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_payload_splits_back() {
        let p = join_broadcast(&[1, 2, 3], &[9]);
        assert_eq!(split_broadcast(&p), Some((&[1u8, 2, 3][..], &[9u8][..])));
        assert_eq!(split_broadcast(&[5, 0, 0, 0, 1]), None);
    }

    #[test]
    fn kind_codes_are_stable() {
        for k in [MsgKind::Model, MsgKind::Null, MsgKind::Anti, MsgKind::Control, MsgKind::Broadcast] {
            assert_eq!(MsgKind::from_u8(k as u8), Some(k));
        }
        assert_eq!(MsgKind::from_u8(5), None);
    }
}
