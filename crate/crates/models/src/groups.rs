//! Ten entities in three fixed interaction groups, started on a deliberately
//! mixed allocation. Each member messages every other member of its group on
//! every step, so a placement that keeps each group on one LP is fully local.

use std::sync::Arc;

use padsim_core::behavior::{Behavior, EntityCtx, ModelResult};
use padsim_core::{EntityId, LpId, SimBuilder, Simulation};

use crate::ModelsError;

/// Groups by 1-based member number; member `k` is `EntityId(k - 1)`.
pub const GROUPS: [&[u64]; 3] = [&[1, 3, 7, 10], &[2, 5, 6], &[4, 8, 9]];

/// Starting allocation: LP0 {1,3,7,5}, LP1 {2,6,9}, LP2 {4,8,10}.
pub const INITIAL: [&[u64]; 3] = [&[1, 3, 7, 5], &[2, 6, 9], &[4, 8, 10]];

pub fn group_of(member: u64) -> usize {
    GROUPS.iter().position(|g| g.contains(&member)).expect("member out of range")
}

/// Allocation where group `i` sits on LP `i`.
pub fn converged_placement() -> Vec<LpId> {
    (1..=10).map(|k| LpId(group_of(k) as u32)).collect()
}

pub fn initial_placement() -> Vec<LpId> {
    (1..=10u64).map(|k| LpId(INITIAL.iter().position(|g| g.contains(&k)).unwrap() as u32)).collect()
}

struct GroupMember {
    peers: Vec<EntityId>,
}

impl Behavior for GroupMember {
    fn on_step(&self, ctx: &mut EntityCtx<'_>) -> ModelResult {
        for &p in &self.peers {
            ctx.send(p, 1, Vec::new())?;
        }
        let n = u64::from_le_bytes(ctx.state()[..8].try_into().unwrap()) + 1;
        ctx.state_mut().copy_from_slice(&n.to_le_bytes());
        Ok(())
    }
}

pub fn groups_model() -> Result<Simulation, ModelsError> {
    let mut b = SimBuilder::new(3);
    let placement = initial_placement();
    for k in 1..=10u64 {
        let peers = GROUPS[group_of(k)].iter().filter(|&&m| m != k).map(|&m| EntityId(m - 1)).collect();
        let h = b.register_behavior(&format!("member-{k}"), Arc::new(GroupMember { peers }))?;
        b.create_entity(h, 0u64.to_le_bytes().to_vec(), placement[(k - 1) as usize])?;
    }
    Ok(b.build()?)
}
