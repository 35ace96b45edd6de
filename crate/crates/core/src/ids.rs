//! Identifiers shared by every layer of the runtime.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Identity of a simulated entity. Dense, assigned at creation, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u64);

impl EntityId {
    /// Destination placeholder carried by area broadcasts.
    pub const ANY: EntityId = EntityId(u64::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Logical process index, `0..lps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LpId(pub u32);

impl LpId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LP{}", self.0)
    }
}

/// Physical execution unit hosting one or more LPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

/// One physical copy of an entity. Without replication every entity has a
/// single copy with `replica == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeId {
    pub entity: EntityId,
    pub replica: u16,
}

impl SeId {
    pub const ANY: SeId = SeId { entity: EntityId::ANY, replica: u16::MAX };

    pub fn new(entity: EntityId, replica: u16) -> Self {
        SeId { entity, replica }
    }

    pub fn primary(entity: EntityId) -> Self {
        SeId { entity, replica: 0 }
    }
}

impl fmt::Display for SeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.replica == 0 {
            write!(f, "{}", self.entity)
        } else {
            write!(f, "{}#{}", self.entity, self.replica)
        }
    }
}

/// Integer timestep index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const MAX: VirtualTime = VirtualTime(u64::MAX);
}

impl Add<u64> for VirtualTime {
    type Output = VirtualTime;
    fn add(self, rhs: u64) -> VirtualTime {
        VirtualTime(self.0.saturating_add(rhs))
    }
}

impl Sub<VirtualTime> for VirtualTime {
    type Output = u64;
    fn sub(self, rhs: VirtualTime) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

/// Message identity: the sending copy plus that copy's send sequence number.
///
/// Sequence numbers travel with the entity, so ids survive migration and
/// replicas of one entity emit the same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId {
    pub src: SeId,
    pub seq: u64,
}

impl MsgId {
    pub const NONE: MsgId = MsgId { src: SeId::ANY, seq: u64::MAX };

    /// Identity shared by the copies that different replicas of the sender emit.
    pub fn logical(self) -> LogicalMsgId {
        LogicalMsgId { entity: self.src.entity, seq: self.seq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogicalMsgId {
    pub entity: EntityId,
    pub seq: u64,
}
