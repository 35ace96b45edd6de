//! Declarative description of a model instance: behaviors, entities and their
//! initial LP assignment.

use std::sync::Arc;

use thiserror::Error;

use crate::behavior::{Behavior, BehaviorHandle, BehaviorRegistry, MediumFactory, RegistryError};
use crate::ids::{EntityId, LpId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelBuildError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("unknown {0}")]
    UnknownLp(LpId),
    #[error("unknown behavior handle {0:?}")]
    UnknownBehavior(BehaviorHandle),
    #[error("lookahead must be at least 1")]
    Lookahead,
    #[error("at least one LP is required")]
    NoLps,
}

#[derive(Debug, Clone)]
pub struct EntityDecl {
    pub id: EntityId,
    pub behavior: BehaviorHandle,
    pub initial_state: Vec<u8>,
}

/// Everything needed to execute a model, independent of how it is partitioned.
#[derive(Clone)]
pub struct ModelSpec {
    pub registry: BehaviorRegistry,
    pub entities: Vec<EntityDecl>,
    pub medium: Option<Arc<dyn MediumFactory>>,
    /// Minimum send delay the model guarantees.
    pub lookahead: u64,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("behaviors", &self.registry)
            .field("entities", &self.entities.len())
            .field("medium", &self.medium.is_some())
            .field("lookahead", &self.lookahead)
            .finish()
    }
}

impl ModelSpec {
    pub fn behavior(&self, handle: BehaviorHandle) -> &Arc<dyn Behavior> {
        self.registry.get(handle).expect("entity references a registered behavior")
    }

    pub fn entity_count(&self) -> u64 {
        self.entities.len() as u64
    }
}

/// A model plus its initial allocation of entities to LPs.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub model: ModelSpec,
    pub lps: usize,
    /// Initial owner of each entity, indexed by `EntityId`.
    pub placement: Vec<LpId>,
}

pub struct SimBuilder {
    lps: usize,
    registry: BehaviorRegistry,
    entities: Vec<EntityDecl>,
    placement: Vec<LpId>,
    medium: Option<Arc<dyn MediumFactory>>,
    lookahead: u64,
}

impl SimBuilder {
    pub fn new(lps: usize) -> Self {
        SimBuilder {
            lps,
            registry: BehaviorRegistry::default(),
            entities: Vec::new(),
            placement: Vec::new(),
            medium: None,
            lookahead: 1,
        }
    }

    pub fn register_behavior(
        &mut self,
        name: &str,
        behavior: Arc<dyn Behavior>,
    ) -> Result<BehaviorHandle, ModelBuildError> {
        Ok(self.registry.register(name, behavior)?)
    }

    /// Adds an entity hosted by `lp` from step 0 on.
    pub fn create_entity(
        &mut self,
        behavior: BehaviorHandle,
        initial_state: Vec<u8>,
        lp: LpId,
    ) -> Result<EntityId, ModelBuildError> {
        if lp.index() >= self.lps {
            return Err(ModelBuildError::UnknownLp(lp));
        }
        if self.registry.get(behavior).is_none() {
            return Err(ModelBuildError::UnknownBehavior(behavior));
        }
        let id = EntityId(self.entities.len() as u64);
        self.entities.push(EntityDecl { id, behavior, initial_state });
        self.placement.push(lp);
        Ok(id)
    }

    pub fn set_medium(&mut self, medium: Arc<dyn MediumFactory>) -> &mut Self {
        self.medium = Some(medium);
        self
    }

    pub fn set_lookahead(&mut self, lookahead: u64) -> Result<&mut Self, ModelBuildError> {
        if lookahead == 0 {
            return Err(ModelBuildError::Lookahead);
        }
        self.lookahead = lookahead;
        Ok(self)
    }

    pub fn build(self) -> Result<Simulation, ModelBuildError> {
        if self.lps == 0 {
            return Err(ModelBuildError::NoLps);
        }
        Ok(Simulation {
            model: ModelSpec {
                registry: self.registry,
                entities: self.entities,
                medium: self.medium,
                lookahead: self.lookahead,
            },
            lps: self.lps,
            placement: self.placement,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Nop;
    impl Behavior for Nop {}

    #[test]
    fn create_entity_on_unknown_lp_fails() {
        let mut b = SimBuilder::new(2);
        let h = b.register_behavior("nop", Arc::new(Nop)).unwrap();
        assert_eq!(b.create_entity(h, vec![], LpId(2)), Err(ModelBuildError::UnknownLp(LpId(2))));
        assert_eq!(b.create_entity(h, vec![], LpId(1)), Ok(EntityId(0)));
        assert_eq!(b.create_entity(h, vec![], LpId(0)), Ok(EntityId(1)));
    }
}
