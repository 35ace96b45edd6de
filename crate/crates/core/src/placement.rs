//! Which LP hosts each entity copy, now and at any earlier step.

use serde::{Deserialize, Serialize};

use crate::ids::{EntityId, LpId, SeId};

/// Ownership of every `(entity, replica)` pair, with the full change history so
/// that message accounting can classify traffic by ownership at send time.
///
/// Every LP keeps its own copy and applies the same updates at the same step
/// boundaries, so all copies agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnershipMap {
    lps: usize,
    replicas: usize,
    /// `history[entity * replicas + replica]`: `(from_step, owner)`, ascending.
    /// `None` marks a copy that was lost.
    history: Vec<Vec<(u64, Option<LpId>)>>,
    rosters: Vec<usize>,
}

impl OwnershipMap {
    /// `initial[e][r]` is the step-0 owner of replica `r` of entity `e`.
    pub fn new(lps: usize, replicas: usize, initial: &[Vec<LpId>]) -> Self {
        let mut rosters = vec![0; lps];
        let mut history = Vec::with_capacity(initial.len() * replicas);
        for owners in initial {
            assert_eq!(owners.len(), replicas, "every entity needs one owner per replica");
            for lp in owners {
                rosters[lp.index()] += 1;
                history.push(vec![(0, Some(*lp))]);
            }
        }
        OwnershipMap { lps, replicas, history, rosters }
    }

    /// Single-copy map from a flat placement.
    pub fn single(lps: usize, placement: &[LpId]) -> Self {
        let initial: Vec<Vec<LpId>> = placement.iter().map(|lp| vec![*lp]).collect();
        Self::new(lps, 1, &initial)
    }

    pub fn lps(&self) -> usize {
        self.lps
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn entities(&self) -> usize {
        self.history.len() / self.replicas.max(1)
    }

    fn slot(&self, se: SeId) -> usize {
        se.entity.index() * self.replicas + se.replica as usize
    }

    pub fn owner(&self, se: SeId) -> Option<LpId> {
        self.history.get(self.slot(se)).and_then(|h| h.last().unwrap().1)
    }

    /// Owner during step `step`.
    pub fn owner_at(&self, se: SeId, step: u64) -> Option<LpId> {
        let h = self.history.get(self.slot(se))?;
        let i = h.partition_point(|(from, _)| *from <= step);
        if i == 0 {
            return None;
        }
        h[i - 1].1
    }

    /// Live copies of `entity` and their owners, by ascending replica index.
    pub fn copies(&self, entity: EntityId) -> impl Iterator<Item = (SeId, LpId)> + '_ {
        (0..self.replicas as u16).filter_map(move |r| {
            let se = SeId::new(entity, r);
            self.owner(se).map(|lp| (se, lp))
        })
    }

    /// Moves (or revives, or with `None` removes) a copy starting at `from_step`.
    pub fn set_owner(&mut self, se: SeId, owner: Option<LpId>, from_step: u64) {
        let slot = self.slot(se);
        let h = &mut self.history[slot];
        let prev = h.last().unwrap().1;
        if prev == owner {
            return;
        }
        if let Some(lp) = prev {
            self.rosters[lp.index()] -= 1;
        }
        if let Some(lp) = owner {
            self.rosters[lp.index()] += 1;
        }
        match h.last_mut() {
            Some(last) if last.0 == from_step => last.1 = owner,
            _ => h.push((from_step, owner)),
        }
    }

    /// Number of copies each LP currently hosts.
    pub fn roster_sizes(&self) -> &[usize] {
        &self.rosters
    }

    pub fn hosted_by(&self, lp: LpId) -> Vec<SeId> {
        let mut out = Vec::with_capacity(self.rosters[lp.index()]);
        for e in 0..self.entities() as u64 {
            for (se, owner) in self.copies(EntityId(e)) {
                if owner == lp {
                    out.push(se);
                }
            }
        }
        out
    }

    /// Every live copy with its owner, in `SeId` order.
    pub fn all_copies(&self) -> impl Iterator<Item = (SeId, LpId)> + '_ {
        (0..self.entities() as u64).flat_map(move |e| self.copies(EntityId(e)))
    }
}
