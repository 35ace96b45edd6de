//! Entities that only count steps and never send.

use std::sync::Arc;

use padsim_core::behavior::{Behavior, EntityCtx, ModelResult};
use padsim_core::{LpId, SimBuilder, Simulation};

use crate::ModelsError;

struct Idle;

impl Behavior for Idle {
    fn on_step(&self, ctx: &mut EntityCtx<'_>) -> ModelResult {
        let n = u64::from_le_bytes(ctx.state()[..8].try_into().unwrap()) + 1;
        ctx.state_mut().copy_from_slice(&n.to_le_bytes());
        Ok(())
    }
}

/// `per_lp` idle entities on each of `lps` LPs.
pub fn idle_model(lps: usize, per_lp: u64) -> Result<Simulation, ModelsError> {
    if lps == 0 {
        return Err(ModelsError::Params("at least one LP is required".into()));
    }
    let mut b = SimBuilder::new(lps);
    let h = b.register_behavior("idle", Arc::new(Idle))?;
    for lp in 0..lps as u32 {
        for _ in 0..per_lp {
            b.create_entity(h, 0u64.to_le_bytes().to_vec(), LpId(lp))?;
        }
    }
    Ok(b.build()?)
}
