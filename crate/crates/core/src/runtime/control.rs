//! Bodies of `Control` frames exchanged between LP drivers.

use serde::{Deserialize, Serialize};

use crate::exec::Hosted;
use crate::ids::{LpId, SeId};
use crate::message::SimMessage;
use crate::migration::{CommWindow, Proposal};
use crate::sync::gvt::GvtMsg;

/// A copy in transit, with everything it needs to resume elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferItem {
    pub se: SeId,
    pub hosted: Hosted,
    pub window: Option<CommWindow>,
    /// Inputs already received for future steps.
    pub pending: Vec<SimMessage>,
    /// Wall clock at serialization, microseconds since the Unix epoch.
    pub sent_at_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Control {
    EndOfStep {
        step: u64,
    },
    Gvt(GvtMsg),
    Ready {
        step: u64,
    },
    Proposals {
        step: u64,
        moves: Vec<Proposal>,
    },
    Transfer {
        step: u64,
        items: Vec<TransferItem>,
    },
    Clones {
        step: u64,
        items: Vec<TransferItem>,
    },
    /// Interactions of copies hosted by the receiver, observed at the sender:
    /// `(copy, partner LP, local, count)`.
    Interactions {
        step: u64,
        counts: Vec<(SeId, LpId, bool, u32)>,
    },
    Done,
}

impl Control {
    pub fn encode(&self) -> Vec<u8> {
        bincode::serialize(self).expect("control bodies always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Result<Control, bincode::Error> {
        bincode::deserialize(bytes)
    }
}

pub fn now_us() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}
