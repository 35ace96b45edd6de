//! Model-facing callback interface.

use std::collections::HashMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ids::{EntityId, MsgId, SeId, VirtualTime};
use crate::message::{join_broadcast, Delivery};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SendError {
    #[error("delay {delay} violates the {protocol} constraint: minimum delay is {floor}")]
    DelayBelowFloor { delay: u64, floor: u64, protocol: &'static str },
    #[error("unknown destination entity {0}")]
    UnknownDestination(EntityId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Send(#[from] SendError),
    #[error("entity state: {0}")]
    State(String),
}

pub type ModelResult = Result<(), ModelError>;

/// Event handlers of one kind of simulated entity.
///
/// State is an opaque byte blob owned by the model; the runtime copies it for
/// checkpoints, migration and replication, and hashes it for trajectory digests.
pub trait Behavior: Send + Sync {
    /// Called once per entity, at the beginning of step 0.
    fn on_init(&self, _ctx: &mut EntityCtx<'_>) -> ModelResult {
        Ok(())
    }

    /// Called once per entity per step, after that step's messages were delivered.
    fn on_step(&self, _ctx: &mut EntityCtx<'_>) -> ModelResult {
        Ok(())
    }

    fn on_message(&self, _ctx: &mut EntityCtx<'_>, _msg: &Delivery<'_>) -> ModelResult {
        Ok(())
    }

    /// Planar position used for snapshot artifacts, when the model has one.
    fn position(&self, _state: &[u8]) -> Option<(f64, f64)> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BehaviorHandle(pub u32);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("behavior {0:?} is already registered")]
    Duplicate(String),
}

#[derive(Default, Clone)]
pub struct BehaviorRegistry {
    entries: Vec<(String, Arc<dyn Behavior>)>,
    by_name: HashMap<String, BehaviorHandle>,
}

impl std::fmt::Debug for BehaviorRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|(n, _)| n)).finish()
    }
}

impl BehaviorRegistry {
    pub fn register(&mut self, name: &str, behavior: Arc<dyn Behavior>) -> Result<BehaviorHandle, RegistryError> {
        if self.by_name.contains_key(name) {
            return Err(RegistryError::Duplicate(name.to_string()));
        }
        let handle = BehaviorHandle(self.entries.len() as u32);
        self.entries.push((name.to_string(), behavior));
        self.by_name.insert(name.to_string(), handle);
        Ok(handle)
    }

    pub fn get(&self, handle: BehaviorHandle) -> Option<&Arc<dyn Behavior>> {
        self.entries.get(handle.0 as usize).map(|(_, b)| b)
    }

    pub fn lookup(&self, name: &str) -> Option<BehaviorHandle> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, handle: BehaviorHandle) -> Option<&str> {
        self.entries.get(handle.0 as usize).map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Receiver-side resolution of area broadcasts.
///
/// Each LP owns one medium indexing the entities it currently hosts; it is rebuilt
/// from entity states at the start of every step that carries broadcasts.
pub trait Medium: Send {
    fn rebuild(&mut self, hosted: &mut dyn Iterator<Item = (SeId, &[u8])>);

    /// Appends the hosted copies that a broadcast with this scope reaches.
    fn resolve(&self, scope: &[u8], out: &mut Vec<SeId>);
}

pub trait MediumFactory: Send + Sync {
    fn create(&self) -> Box<dyn Medium>;
}

/// Where an outgoing message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Entity(EntityId),
    Broadcast,
}

/// A send issued by a callback, before routing.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub id: MsgId,
    pub target: Target,
    pub send_ts: VirtualTime,
    pub recv_ts: VirtualTime,
    /// For broadcasts this already holds the joined scope and body.
    pub payload: Vec<u8>,
}

/// Per-run limits the context enforces on sends.
#[derive(Debug, Clone, Copy)]
pub struct SendRules {
    pub floor: u64,
    pub protocol: &'static str,
    pub horizon: VirtualTime,
    pub entities: u64,
}

/// Handle passed to every callback.
pub struct EntityCtx<'a> {
    se: SeId,
    now: VirtualTime,
    rng: RngStream,
    rules: SendRules,
    state: &'a mut Vec<u8>,
    next_seq: &'a mut u64,
    outbox: &'a mut Vec<Outgoing>,
    beyond_horizon: &'a mut u64,
}

impl<'a> EntityCtx<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        se: SeId,
        now: VirtualTime,
        seed: u64,
        rules: SendRules,
        state: &'a mut Vec<u8>,
        next_seq: &'a mut u64,
        outbox: &'a mut Vec<Outgoing>,
        beyond_horizon: &'a mut u64,
    ) -> Self {
        EntityCtx { se, now, rng: RngStream::new(seed, se.entity.0), rules, state, next_seq, outbox, beyond_horizon }
    }

    pub fn id(&self) -> EntityId {
        self.se.entity
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn horizon(&self) -> VirtualTime {
        self.rules.horizon
    }

    pub fn state(&self) -> &[u8] {
        self.state
    }

    pub fn state_mut(&mut self) -> &mut Vec<u8> {
        self.state
    }

    /// Random generator for this entity, this step and the given purpose tag.
    /// Replicas of one entity draw identical values.
    pub fn rng(&self, purpose: u64) -> ChaCha8Rng {
        self.rng.at(self.now.0, purpose)
    }

    fn check_delay(&self, delay: u64) -> Result<(), SendError> {
        if delay < self.rules.floor {
            return Err(SendError::DelayBelowFloor { delay, floor: self.rules.floor, protocol: self.rules.protocol });
        }
        Ok(())
    }

    fn push(&mut self, target: Target, delay: u64, payload: Vec<u8>) {
        let id = MsgId { src: self.se, seq: *self.next_seq };
        *self.next_seq += 1;
        let recv_ts = self.now + delay;
        if recv_ts > self.rules.horizon {
            *self.beyond_horizon += 1;
            return;
        }
        self.outbox.push(Outgoing { id, target, send_ts: self.now, recv_ts, payload });
    }

    /// Point-to-point send, received at `now + delay`.
    pub fn send(&mut self, dst: EntityId, delay: u64, payload: Vec<u8>) -> Result<(), SendError> {
        self.check_delay(delay)?;
        if dst.0 >= self.rules.entities {
            return Err(SendError::UnknownDestination(dst));
        }
        self.push(Target::Entity(dst), delay, payload);
        Ok(())
    }

    /// Area broadcast: every entity the medium resolves from `scope` receives
    /// `body` at `now + delay`. The sender never receives its own broadcast.
    pub fn broadcast(&mut self, scope: &[u8], body: &[u8], delay: u64) -> Result<(), SendError> {
        self.check_delay(delay)?;
        self.push(Target::Broadcast, delay, join_broadcast(scope, body));
        Ok(())
    }
}
