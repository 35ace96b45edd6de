//! Synchronization protocols.
//!
//! The LP-local state machines live here and are testable without a transport;
//! the drivers that wire them to endpoints are in [`crate::runtime`].

pub mod barrier;
pub mod cmb;
pub mod gvt;
pub mod tw;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::DeliveryRecord;
use crate::ft::dedup::Quarantined;
use crate::ids::SeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    TimeStepped,
    Cmb,
    TimeWarp,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::TimeStepped => "time-stepped",
            ProtocolKind::Cmb => "cmb",
            ProtocolKind::TimeWarp => "time-warp",
        }
    }

    /// Minimum send delay models must respect.
    pub fn delay_floor(self, lookahead: u64) -> u64 {
        match self {
            ProtocolKind::Cmb => lookahead.max(1),
            _ => 1,
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "time-stepped" => Ok(ProtocolKind::TimeStepped),
            "cmb" => Ok(ProtocolKind::Cmb),
            "time-warp" => Ok(ProtocolKind::TimeWarp),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// Which LPs a conservative LP exchanges timestamps with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every LP feeds every other LP.
    #[default]
    Mesh,
    /// LP `i` feeds only LP `i + 1 mod n`.
    Ring,
}

impl Topology {
    pub fn downstream(self, me: usize, lps: usize) -> Vec<usize> {
        match self {
            Topology::Mesh => (0..lps).filter(|&j| j != me).collect(),
            Topology::Ring if lps > 1 => vec![(me + 1) % lps],
            Topology::Ring => vec![],
        }
    }

    pub fn upstream(self, me: usize, lps: usize) -> Vec<usize> {
        match self {
            Topology::Mesh => (0..lps).filter(|&j| j != me).collect(),
            Topology::Ring if lps > 1 => vec![(me + lps - 1) % lps],
            Topology::Ring => vec![],
        }
    }
}

impl FromStr for Topology {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mesh" => Ok(Topology::Mesh),
            "ring" => Ok(Topology::Ring),
            other => Err(format!("unknown topology {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncParams {
    pub protocol: ProtocolKind,
    pub lookahead: u64,
    /// Time Warp: checkpoint every `C` steps.
    pub checkpoint_every: u64,
    /// Time Warp: start a GVT round after this many processed events.
    pub gvt_every: u64,
    pub topology: Topology,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams {
            protocol: ProtocolKind::TimeStepped,
            lookahead: 1,
            checkpoint_every: 8,
            gvt_every: 4096,
            topology: Topology::Mesh,
        }
    }
}

/// Everything an LP learned while executing one step, kept until the step is
/// committed (immediately under the conservative protocols, once GVT passes it
/// under Time Warp).
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    pub step: u64,
    /// Hashes of hosted copies after the step.
    pub hashes: Vec<(SeId, u64)>,
    pub deliveries: Vec<DeliveryRecord>,
    /// Positions at the beginning of the step, when a snapshot was requested.
    pub positions: Option<Vec<(SeId, f64, f64)>>,
    /// Physical model messages sent.
    pub sent: u64,
    pub beyond_horizon: u64,
    pub quarantined: Vec<Quarantined>,
    pub rollbacks: u64,
    pub antimessages: u64,
    pub wall_us: u64,
}
