//! Replication: every logical entity runs as `R` identical copies on distinct
//! LPs and nodes. Copies share their RNG stream and message sequence, so they
//! stay bit-identical; receivers suppress duplicates (or vote on them).

pub mod dedup;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{EntityId, LpId, NodeId, SeId};
use crate::migration::Proposal;
use crate::placement::OwnershipMap;

pub use dedup::{DedupState, FtMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtParams {
    pub enabled: bool,
    pub replicas: usize,
    pub mode: FtMode,
    /// Wall seconds a barrier waits for a silent peer before declaring it dead.
    pub barrier_timeout_s: f64,
    /// Restore the replication degree after a crash by cloning a survivor.
    pub rereplicate: bool,
}

impl Default for FtParams {
    fn default() -> Self {
        FtParams { enabled: false, replicas: 1, mode: FtMode::Crash, barrier_timeout_s: 10.0, rereplicate: false }
    }
}

impl FtParams {
    /// Copies per entity actually run.
    pub fn degree(&self) -> usize {
        if self.enabled {
            self.replicas.max(1)
        } else {
            1
        }
    }

    /// Live copies an entity needs to keep going.
    pub fn quorum(&self) -> usize {
        match self.mode {
            FtMode::Crash => 1,
            FtMode::Byzantine => self.degree() / 2 + 1,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FtError {
    #[error("{replicas} replicas need {replicas} distinct nodes, only {nodes} available")]
    Placement { replicas: usize, nodes: usize },
    #[error("{mode:?} mode with {replicas} replicas tolerates no fault; needs at least {need}")]
    Degree { mode: FtMode, replicas: usize, need: usize },
    #[error("{entity} lost quorum at step {step}: {alive} of {replicas} copies alive, {quorum} needed")]
    QuorumLost { entity: EntityId, step: u64, alive: usize, quorum: usize, replicas: usize },
}

/// A logical entity and the physical copies realizing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VseGroup {
    pub entity: EntityId,
    pub mode: FtMode,
    /// `(copy, owner LP, owner node)` by ascending replica index.
    pub replicas: Vec<(SeId, LpId, NodeId)>,
}

impl VseGroup {
    pub fn from_map(map: &OwnershipMap, nodes: &[NodeId], entity: EntityId, mode: FtMode) -> Self {
        VseGroup { entity, mode, replicas: map.copies(entity).map(|(se, lp)| (se, lp, nodes[lp.index()])).collect() }
    }
}

/// LPs for the `r` copies of an entity whose first copy lives on `primary`.
///
/// Walks the LPs upward from `primary` and takes the first LP of each node not
/// used yet, so copies land on pairwise distinct nodes and LPs.
pub fn place_replicas(primary: LpId, r: usize, nodes: &[NodeId]) -> Result<Vec<LpId>, FtError> {
    let distinct: BTreeSet<NodeId> = nodes.iter().copied().collect();
    if r > distinct.len() {
        return Err(FtError::Placement { replicas: r, nodes: distinct.len() });
    }
    let lps = nodes.len();
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(r);
    for k in 0..lps {
        if out.len() == r {
            break;
        }
        let lp = (primary.index() + k) % lps;
        if used.insert(nodes[lp]) {
            out.push(LpId(lp as u32));
        }
    }
    Ok(out)
}

/// Builds the replica group for one entity.
pub fn make_vse(
    entity: EntityId,
    primary: LpId,
    r: usize,
    mode: FtMode,
    nodes: &[NodeId],
) -> Result<VseGroup, FtError> {
    let lps = place_replicas(primary, r, nodes)?;
    Ok(VseGroup {
        entity,
        mode,
        replicas: lps
            .into_iter()
            .enumerate()
            .map(|(i, lp)| (SeId::new(entity, i as u16), lp, nodes[lp.index()]))
            .collect(),
    })
}

/// Initial ownership for all entities, replicated per `ft`.
pub fn replicated_map(placement: &[LpId], nodes: &[NodeId], ft: &FtParams) -> Result<OwnershipMap, FtError> {
    let r = ft.degree();
    if ft.enabled && ft.mode == FtMode::Byzantine && r > 1 && r < 3 {
        return Err(FtError::Degree { mode: ft.mode, replicas: r, need: 3 });
    }
    let mut owners = Vec::with_capacity(placement.len());
    for lp in placement {
        owners.push(if r == 1 { vec![*lp] } else { place_replicas(*lp, r, nodes)? });
    }
    Ok(OwnershipMap::new(nodes.len(), r, &owners))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reclone {
    /// Survivor the new copy is cloned from.
    pub source: SeId,
    pub source_lp: LpId,
    /// New copy; reuses the lost copy's replica index.
    pub copy: SeId,
    pub to: LpId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub step: u64,
    pub dead_lps: Vec<LpId>,
    pub dead_nodes: Vec<NodeId>,
    /// Groups that lost at least one copy, with their membership afterwards.
    pub affected: Vec<VseGroup>,
    pub reclones: Vec<Reclone>,
}

/// Removes every copy hosted by `dead` LPs from `step` on. `dead` holds every
/// LP lost so far, not only the new ones, so that clones never land on an LP
/// that failed earlier. Fails if an entity falls below quorum. With
/// `rereplicate`, plans one clone per lost copy onto a surviving LP that keeps
/// placement valid, and records the new copies in `map`.
pub fn on_crash(
    map: &mut OwnershipMap,
    nodes: &[NodeId],
    dead: &BTreeSet<LpId>,
    step: u64,
    ft: &FtParams,
) -> Result<RecoveryReport, FtError> {
    let mut lost: Vec<SeId> = Vec::new();
    let mut lost_on: BTreeSet<LpId> = BTreeSet::new();
    for (se, lp) in map.all_copies().collect::<Vec<_>>() {
        if dead.contains(&lp) {
            map.set_owner(se, None, step);
            lost.push(se);
            lost_on.insert(lp);
        }
    }
    let mut touched: Vec<EntityId> = lost.iter().map(|se| se.entity).collect();
    touched.dedup();
    let quorum = ft.quorum();
    for &e in &touched {
        let alive = map.copies(e).count();
        if alive < quorum {
            return Err(FtError::QuorumLost { entity: e, step, alive, quorum, replicas: map.replicas() });
        }
    }

    let mut reclones = Vec::new();
    if ft.rereplicate {
        // Replays on every LP in the same order, so all LPs pick the same targets.
        let dead_nodes: BTreeSet<NodeId> = dead.iter().map(|lp| nodes[lp.index()]).collect();
        for se in &lost {
            let group: Vec<(SeId, LpId)> = map.copies(se.entity).collect();
            let Some(&(source, source_lp)) = group.first() else { continue };
            let used_nodes: BTreeSet<NodeId> = group.iter().map(|(_, lp)| nodes[lp.index()]).collect();
            let target = (0..nodes.len())
                .map(|i| LpId(i as u32))
                .filter(|lp| !dead.contains(lp) && !dead_nodes.contains(&nodes[lp.index()]))
                .filter(|lp| !used_nodes.contains(&nodes[lp.index()]))
                .min_by_key(|lp| (map.roster_sizes()[lp.index()], *lp));
            if let Some(to) = target {
                map.set_owner(*se, Some(to), step);
                reclones.push(Reclone { source, source_lp, copy: *se, to });
            }
        }
    }

    Ok(RecoveryReport {
        step,
        dead_lps: lost_on.iter().copied().collect(),
        dead_nodes: lost_on.iter().map(|lp| nodes[lp.index()]).collect::<BTreeSet<_>>().into_iter().collect(),
        affected: touched.iter().map(|e| VseGroup::from_map(map, nodes, *e, ft.mode)).collect(),
        reclones,
    })
}

/// Drops moves that would put two copies of one entity on the same LP or node.
/// Moves are applied in order, so a later move sees the effect of earlier ones.
pub fn ft_migration_filter(moves: &[Proposal], map: &OwnershipMap, nodes: &[NodeId]) -> Vec<Proposal> {
    if map.replicas() <= 1 {
        return moves.to_vec();
    }
    let mut moved: std::collections::HashMap<SeId, LpId> = std::collections::HashMap::new();
    let mut kept = Vec::with_capacity(moves.len());
    for m in moves {
        let clash = map.copies(m.se.entity).any(|(other, lp)| {
            let lp = moved.get(&other).copied().unwrap_or(lp);
            other != m.se && (lp == m.to || nodes[lp.index()] == nodes[m.to.index()])
        });
        if !clash {
            moved.insert(m.se, m.to);
            kept.push(*m);
        }
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SharedLp { entity: EntityId, lp: LpId },
    SharedNode { entity: EntityId, node: NodeId },
}

/// Checks the placement constraint over the whole map.
pub fn audit_placement(map: &OwnershipMap, nodes: &[NodeId]) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in 0..map.entities() as u64 {
        let entity = EntityId(e);
        let mut lps = BTreeSet::new();
        let mut ns = BTreeSet::new();
        for (_, lp) in map.copies(entity) {
            if !lps.insert(lp) {
                out.push(Violation::SharedLp { entity, lp });
            } else if !ns.insert(nodes[lp.index()]) {
                out.push(Violation::SharedNode { entity, node: nodes[lp.index()] });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn two_replicas_on_three_nodes() {
        let g = make_vse(EntityId(0), LpId(2), 2, FtMode::Crash, &nodes(3)).unwrap();
        assert_eq!(g.replicas.len(), 2);
        assert_ne!(g.replicas[0].2, g.replicas[1].2);
        assert_eq!(g.replicas[0].1, LpId(2));
    }

    #[test]
    fn four_replicas_on_three_nodes_is_refused() {
        assert_eq!(
            make_vse(EntityId(0), LpId(0), 4, FtMode::Crash, &nodes(3)),
            Err(FtError::Placement { replicas: 4, nodes: 3 })
        );
        // Four LPs but two share a node.
        let n = [NodeId(0), NodeId(1), NodeId(1), NodeId(2)];
        assert!(make_vse(EntityId(0), LpId(0), 4, FtMode::Crash, &n).is_err());
        let g = make_vse(EntityId(0), LpId(1), 3, FtMode::Crash, &n).unwrap();
        assert_eq!(g.replicas.iter().map(|r| r.1).collect::<Vec<_>>(), vec![LpId(1), LpId(3), LpId(0)]);
    }

    #[test]
    fn single_replica_is_a_plain_entity() {
        let g = make_vse(EntityId(5), LpId(1), 1, FtMode::Crash, &nodes(3)).unwrap();
        assert_eq!(g.replicas, vec![(SeId::primary(EntityId(5)), LpId(1), NodeId(1))]);
    }

    #[test]
    fn crash_of_one_copy_keeps_quorum() {
        let ft = FtParams { enabled: true, replicas: 2, ..Default::default() };
        let mut map = replicated_map(&[LpId(0), LpId(1), LpId(2)], &nodes(3), &ft).unwrap();
        let r = on_crash(&mut map, &nodes(3), &[LpId(1)].into(), 50, &ft).unwrap();
        assert_eq!(r.affected.len(), 2);
        assert!(r.affected.iter().all(|g| g.replicas.len() == 1));
        assert_eq!(map.roster_sizes()[1], 0);
        assert!(audit_placement(&map, &nodes(3)).is_empty());
    }

    #[test]
    fn crash_without_redundancy_is_fatal() {
        let ft = FtParams { enabled: true, replicas: 1, ..Default::default() };
        let mut map = replicated_map(&[LpId(0), LpId(1)], &nodes(2), &ft).unwrap();
        let err = on_crash(&mut map, &nodes(2), &[LpId(1)].into(), 3, &ft).unwrap_err();
        assert!(matches!(err, FtError::QuorumLost { entity: EntityId(1), alive: 0, .. }));
    }

    #[test]
    fn rereplication_restores_degree() {
        let ft = FtParams { enabled: true, replicas: 2, rereplicate: true, ..Default::default() };
        let n = nodes(3);
        let mut map = replicated_map(&[LpId(0), LpId(1), LpId(2)], &n, &ft).unwrap();
        let r = on_crash(&mut map, &n, &[LpId(2)].into(), 10, &ft).unwrap();
        assert_eq!(r.reclones.len(), 2);
        for e in 0..3 {
            assert_eq!(map.copies(EntityId(e)).count(), 2);
        }
        assert!(audit_placement(&map, &n).is_empty());
    }

    #[test]
    fn violating_move_is_dropped_compliant_passes() {
        let ft = FtParams { enabled: true, replicas: 2, ..Default::default() };
        let n = nodes(3);
        let map = replicated_map(&[LpId(0)], &n, &ft).unwrap(); // copies on LP0, LP1
        let bad = Proposal { se: SeId::new(EntityId(0), 0), from: LpId(0), to: LpId(1), score: 1.0 };
        let good = Proposal { se: SeId::new(EntityId(0), 0), from: LpId(0), to: LpId(2), score: 1.0 };
        assert!(ft_migration_filter(&[bad], &map, &n).is_empty());
        assert_eq!(ft_migration_filter(&[good], &map, &n), vec![good]);
        // Two copies heading for the same LP: the second one must go.
        let other = Proposal { se: SeId::new(EntityId(0), 1), from: LpId(1), to: LpId(2), score: 1.0 };
        assert_eq!(ft_migration_filter(&[good, other], &map, &n), vec![good]);
    }
}
