//! What LP drivers tell the controlling context while a run is in progress.

use serde::{Deserialize, Serialize};

use crate::digest::EventFingerprint;
use crate::ft::dedup::Quarantined;
use crate::ft::RecoveryReport;
use crate::ids::{LpId, SeId};
use crate::migration::MigrationRecord;

/// One committed step of one LP.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub lp: LpId,
    pub step: u64,
    pub hashes: Vec<(SeId, u64)>,
    /// `(send step, local, remote)` for the deliveries of this step.
    pub traffic: Vec<(u64, u64, u64)>,
    pub positions: Option<Vec<(SeId, f64, f64)>>,
    pub sent: u64,
    pub beyond_horizon: u64,
    pub quarantined: Vec<Quarantined>,
    pub rollbacks: u64,
    pub antimessages: u64,
    pub nulls: u64,
    pub wall_us: u64,
    /// Deliveries to first copies only.
    pub fingerprint: EventFingerprint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpCounters {
    pub steps: u64,
    pub sent: u64,
    pub delivered: u64,
    pub nulls: u64,
    pub rollbacks: u64,
    pub antimessages: u64,
    pub annihilated: u64,
    pub coasted_steps: u64,
    pub gvt_rounds: u64,
    pub duplicates: u64,
    pub quarantined: u64,
    pub frames_sent: u64,
    pub migrations_out: u64,
    pub migrations_in: u64,
    pub beyond_horizon: u64,
}

impl LpCounters {
    pub fn add(&mut self, o: &LpCounters) {
        self.steps += o.steps;
        self.sent += o.sent;
        self.delivered += o.delivered;
        self.nulls += o.nulls;
        self.rollbacks += o.rollbacks;
        self.antimessages += o.antimessages;
        self.annihilated += o.annihilated;
        self.coasted_steps += o.coasted_steps;
        self.gvt_rounds += o.gvt_rounds;
        self.duplicates += o.duplicates;
        self.quarantined += o.quarantined;
        self.frames_sent += o.frames_sent;
        self.migrations_out += o.migrations_out;
        self.migrations_in += o.migrations_in;
        self.beyond_horizon += o.beyond_horizon;
    }
}

#[derive(Debug, Clone)]
pub enum Report {
    Step(StepReport),
    Migration(MigrationRecord),
    Recovery(RecoveryReport),
    Finished { lp: LpId, counters: LpCounters },
    Crashed { lp: LpId, step: u64 },
    Failed { lp: LpId, error: String },
}
