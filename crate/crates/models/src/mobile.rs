//! Wireless ad-hoc network of mobile hosts on a torus.
//!
//! Each host follows a random waypoint. Every step a random fifth of the hosts
//! pings every host within the transmission radius; a ping is an area broadcast
//! resolved at the receivers against their positions.

use std::str::FromStr;
use std::sync::Arc;

use padsim_core::behavior::{Behavior, EntityCtx, Medium, MediumFactory, ModelError, ModelResult};
use padsim_core::message::Delivery;
use padsim_core::rng::{purpose, RngStream};
use padsim_core::{LpId, SeId, SimBuilder, Simulation};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{torus_delta, wrap, SpatialGrid};
use crate::ModelsError;

pub const STATE_LEN: usize = 64;

const MOVE: u64 = 0x30FE;
const PING: u64 = 0xB10C;
const LP_DRAW: u64 = 0x1DA1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhParams {
    pub n_hosts: u64,
    pub side: f64,
    pub radius: f64,
    pub max_speed: f64,
    /// Lower end of the speed draw; speeds are uniform in `(min_speed, max_speed]`.
    pub min_speed: f64,
    pub move_fraction: f64,
    pub broadcast_fraction: f64,
}

impl Default for MhParams {
    fn default() -> Self {
        MhParams {
            n_hosts: 9999,
            side: 10000.0,
            radius: 250.0,
            max_speed: 10.0,
            min_speed: 1.0,
            move_fraction: 0.7,
            broadcast_fraction: 0.2,
        }
    }
}

impl MhParams {
    pub fn validate(&self) -> Result<(), ModelsError> {
        let bad = |m: String| Err(ModelsError::Params(m));
        if self.n_hosts == 0 {
            return bad("n_hosts must be positive".into());
        }
        if self.side.is_nan() || self.side <= 0.0 {
            return bad(format!("side must be positive, got {}", self.side));
        }
        if !(self.radius >= 0.0 && self.radius < self.side / 2.0) {
            return bad(format!("radius {} must lie in [0, side/2)", self.radius));
        }
        if self.max_speed.is_nan() || self.max_speed <= 0.0 || !(0.0..=self.max_speed).contains(&self.min_speed) {
            return bad(format!(
                "need 0 <= min_speed <= max_speed, max_speed > 0; got {} and {}",
                self.min_speed, self.max_speed
            ));
        }
        for (name, v) in [("move_fraction", self.move_fraction), ("broadcast_fraction", self.broadcast_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    fn draw_speed(&self, rng: &mut impl Rng) -> f64 {
        self.max_speed - rng.gen::<f64>() * (self.max_speed - self.min_speed)
    }
}

/// Mobile host state, 64 bytes little-endian: position, waypoint, speed, pings
/// sent and pings received.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhState {
    pub x: f64,
    pub y: f64,
    pub wx: f64,
    pub wy: f64,
    pub speed: f64,
    pub sent: u64,
    pub received: u64,
}

impl MhState {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(STATE_LEN);
        for v in [self.x, self.y, self.wx, self.wy, self.speed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.sent.to_le_bytes());
        out.extend_from_slice(&self.received.to_le_bytes());
        out.resize(STATE_LEN, 0);
        out
    }

    pub fn decode(b: &[u8]) -> Result<Self, ModelError> {
        if b.len() != STATE_LEN {
            return Err(ModelError::State(format!("mobile host state is {} bytes, expected {STATE_LEN}", b.len())));
        }
        let f = |i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
        let u = |i: usize| u64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
        Ok(MhState { x: f(0), y: f(1), wx: f(2), wy: f(3), speed: f(4), sent: u(5), received: u(6) })
    }

    pub fn random(p: &MhParams, rng: &mut impl Rng) -> Self {
        MhState {
            x: rng.gen::<f64>() * p.side,
            y: rng.gen::<f64>() * p.side,
            wx: rng.gen::<f64>() * p.side,
            wy: rng.gen::<f64>() * p.side,
            speed: p.draw_speed(rng),
            sent: 0,
            received: 0,
        }
    }
}

/// One step of random-waypoint motion. With probability `move_fraction` the
/// host advances `speed` toward its waypoint along the shorter torus path; on
/// reaching it, it draws a new waypoint and speed.
pub fn random_waypoint_step(s: &MhState, p: &MhParams, rng: &mut impl Rng) -> MhState {
    let mut n = *s;
    if !rng.gen_bool(p.move_fraction) {
        return n;
    }
    let dx = torus_delta(s.x, s.wx, p.side);
    let dy = torus_delta(s.y, s.wy, p.side);
    let dist = dx.hypot(dy);
    if dist <= s.speed {
        n.x = s.wx;
        n.y = s.wy;
        n.wx = rng.gen::<f64>() * p.side;
        n.wy = rng.gen::<f64>() * p.side;
        n.speed = p.draw_speed(rng);
    } else {
        n.x = wrap(s.x + dx / dist * s.speed, p.side);
        n.y = wrap(s.y + dy / dist * s.speed, p.side);
    }
    n
}

pub struct MobileHost {
    pub params: MhParams,
}

fn scope(x: f64, y: f64) -> [u8; 16] {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&x.to_le_bytes());
    b[8..].copy_from_slice(&y.to_le_bytes());
    b
}

impl Behavior for MobileHost {
    fn on_step(&self, ctx: &mut EntityCtx<'_>) -> ModelResult {
        let s = MhState::decode(ctx.state())?;
        let mut n = random_waypoint_step(&s, &self.params, &mut ctx.rng(MOVE));
        if ctx.rng(PING).gen_bool(self.params.broadcast_fraction) {
            ctx.broadcast(&scope(n.x, n.y), &[], 1)?;
            n.sent += 1;
        }
        ctx.state_mut().copy_from_slice(&n.encode());
        Ok(())
    }

    fn on_message(&self, ctx: &mut EntityCtx<'_>, _msg: &Delivery<'_>) -> ModelResult {
        let mut s = MhState::decode(ctx.state())?;
        s.received += 1;
        ctx.state_mut().copy_from_slice(&s.encode());
        Ok(())
    }

    fn position(&self, state: &[u8]) -> Option<(f64, f64)> {
        MhState::decode(state).ok().map(|s| (s.x, s.y))
    }
}

/// Grid over the hosts of one LP; a ping reaches the hosts within the radius.
pub struct GridMedium {
    grid: SpatialGrid,
}

impl Medium for GridMedium {
    fn rebuild(&mut self, hosted: &mut dyn Iterator<Item = (SeId, &[u8])>) {
        self.grid.clear();
        for (se, state) in hosted {
            if let Ok(s) = MhState::decode(state) {
                self.grid.insert(se, s.x, s.y);
            }
        }
    }

    fn resolve(&self, scope: &[u8], out: &mut Vec<SeId>) {
        if scope.len() != 16 {
            return;
        }
        let x = f64::from_le_bytes(scope[..8].try_into().unwrap());
        let y = f64::from_le_bytes(scope[8..].try_into().unwrap());
        self.grid.neighbors_within(x, y, out);
    }
}

pub struct GridMediumFactory {
    pub side: f64,
    pub radius: f64,
}

impl MediumFactory for GridMediumFactory {
    fn create(&self) -> Box<dyn Medium> {
        Box::new(GridMedium { grid: SpatialGrid::new(self.side, self.radius) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    /// Each host on an independently drawn LP.
    Random,
    /// Vertical stripes of equal width, one per LP.
    Stripes,
}

impl FromStr for Allocation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Allocation::Random),
            "stripes" => Ok(Allocation::Stripes),
            other => Err(format!("unknown allocation {other:?}, expected random or stripes")),
        }
    }
}

impl std::fmt::Display for Allocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Allocation::Random => "random",
            Allocation::Stripes => "stripes",
        })
    }
}

pub fn stripe_of(x: f64, side: f64, lps: usize) -> LpId {
    LpId(((x / (side / lps as f64)) as usize).min(lps - 1) as u32)
}

/// Initial LP of each host.
pub fn initial_allocation(kind: Allocation, states: &[MhState], side: f64, lps: usize, seed: u64) -> Vec<LpId> {
    states
        .iter()
        .enumerate()
        .map(|(i, s)| match kind {
            Allocation::Random => LpId(RngStream::new(seed, i as u64).at(0, LP_DRAW).gen_range(0..lps as u32)),
            Allocation::Stripes => stripe_of(s.x, side, lps),
        })
        .collect()
}

pub fn initial_states(p: &MhParams, seed: u64) -> Vec<MhState> {
    (0..p.n_hosts).map(|i| MhState::random(p, &mut RngStream::new(seed, i).at(0, purpose::ALLOCATION))).collect()
}

pub fn mobile_hosts(p: &MhParams, lps: usize, alloc: Allocation, seed: u64) -> Result<Simulation, ModelsError> {
    p.validate()?;
    if lps == 0 {
        return Err(ModelsError::Params("at least one LP is required".into()));
    }
    let states = initial_states(p, seed);
    let placement = initial_allocation(alloc, &states, p.side, lps, seed);
    let mut b = SimBuilder::new(lps);
    let h = b.register_behavior("mobile-host", Arc::new(MobileHost { params: *p }))?;
    for (s, lp) in states.iter().zip(placement) {
        b.create_entity(h, s.encode(), lp)?;
    }
    b.set_medium(Arc::new(GridMediumFactory { side: p.side, radius: p.radius }));
    Ok(b.build()?)
}
