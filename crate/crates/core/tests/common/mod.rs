#![allow(dead_code)]

use std::sync::Arc;

use padsim_core::behavior::{Behavior, EntityCtx, ModelResult};
use padsim_core::message::Delivery;
use padsim_core::{EntityId, LpId, SimBuilder, Simulation};
use rand::Rng;

/// Each entity folds received payloads into a running hash and sends one or
/// two messages per step, mostly within its own group of `group` entities.
pub struct Chatter {
    pub entities: u64,
    pub group: u64,
    pub max_delay: u64,
}

fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(23)
}

impl Behavior for Chatter {
    fn on_step(&self, ctx: &mut EntityCtx<'_>) -> ModelResult {
        let me = ctx.id().0;
        let mut rng = ctx.rng(7);
        let sends = rng.gen_range(0..=2);
        for _ in 0..sends {
            let dst = if rng.gen_bool(0.9) {
                let base = me - me % self.group;
                (base + rng.gen_range(0..self.group)).min(self.entities - 1)
            } else {
                rng.gen_range(0..self.entities)
            };
            let delay = rng.gen_range(1..=self.max_delay);
            let v: u64 = rng.gen();
            ctx.send(EntityId(dst), delay, v.to_le_bytes().to_vec())?;
        }
        let s = ctx.state_mut();
        let h = u64::from_le_bytes(s[..8].try_into().unwrap());
        s[..8].copy_from_slice(&mix(h, 1).to_le_bytes());
        Ok(())
    }

    fn on_message(&self, ctx: &mut EntityCtx<'_>, msg: &Delivery<'_>) -> ModelResult {
        let x = u64::from_le_bytes(msg.payload[..8].try_into().unwrap());
        let s = ctx.state_mut();
        let h = u64::from_le_bytes(s[..8].try_into().unwrap());
        s[..8].copy_from_slice(&mix(h, x ^ msg.src.0).to_le_bytes());
        Ok(())
    }
}

/// Entities placed round-robin, so groups start spread over every LP.
pub fn chatter(lps: usize, entities: u64, group: u64, max_delay: u64) -> Simulation {
    let mut b = SimBuilder::new(lps);
    let h = b.register_behavior("chatter", Arc::new(Chatter { entities, group, max_delay })).unwrap();
    for i in 0..entities {
        b.create_entity(h, i.to_le_bytes().to_vec(), LpId((i % lps as u64) as u32)).unwrap();
    }
    b.build().unwrap()
}

/// Counts steps and never sends.
pub struct Quiet;

impl Behavior for Quiet {
    fn on_step(&self, ctx: &mut EntityCtx<'_>) -> ModelResult {
        let s = ctx.state_mut();
        s[0] = s[0].wrapping_add(1);
        Ok(())
    }
}

pub fn quiet(lps: usize, entities: u64) -> Simulation {
    let mut b = SimBuilder::new(lps);
    let h = b.register_behavior("quiet", Arc::new(Quiet)).unwrap();
    for i in 0..entities {
        b.create_entity(h, vec![0], LpId((i % lps as u64) as u32)).unwrap();
    }
    b.build().unwrap()
}
