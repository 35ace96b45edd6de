//! Adaptive partitioning: interaction accounting, LCR and migration decisions.

pub mod comm;
pub mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{LpId, SeId};
use crate::placement::OwnershipMap;

pub use comm::{CommMatrix, CommWindow, WindowTotals};
pub use plan::{
    band_filter, evaluate_migrations, propose, reconcile, reconcile_among, MigrationPlan, MoveFilter, Proposal,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MigrationParams {
    pub enabled: bool,
    /// `W`: steps of history per entity.
    pub window: usize,
    /// `E`: steps between evaluations.
    pub eval_every: u64,
    /// `θ`: minimum fraction of window traffic toward the target LP.
    pub threshold: f64,
    /// `m_min`: minimum window traffic for an entity to be considered.
    pub min_activity: u64,
    /// `β`: allowed relative deviation of roster sizes from the mean.
    pub balance_band: f64,
    /// `H`: evaluations an entity stays put after moving.
    pub hysteresis: u64,
}

impl Default for MigrationParams {
    fn default() -> Self {
        MigrationParams {
            enabled: false,
            window: 16,
            eval_every: 16,
            threshold: 0.6,
            min_activity: 4,
            balance_band: 0.25,
            hysteresis: 2,
        }
    }
}

impl MigrationParams {
    /// Steps at which a migration fence runs.
    pub fn is_fence(&self, step: u64, horizon: u64) -> bool {
        self.enabled && self.eval_every > 0 && step > 0 && step < horizon && step.is_multiple_of(self.eval_every)
    }
}

/// `100 × local / (local + remote)`, absent when no message was exchanged.
pub fn compute_lcr(local: u64, remote: u64) -> Option<f64> {
    let total = local + remote;
    (total > 0).then(|| 100.0 * local as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcrSample {
    pub step: u64,
    pub lcr_percent: Option<f64>,
    pub rosters: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MigrationError {
    #[error("{se} already lives on {lp}; self-migration is a no-op")]
    SelfMigration { se: SeId, lp: LpId },
    #[error("{0} has no live owner")]
    NoOwner(SeId),
    #[error("unknown destination {0}")]
    UnknownLp(LpId),
}

/// Checks one move against the current map.
pub fn validate_move(map: &OwnershipMap, se: SeId, to: LpId) -> Result<LpId, MigrationError> {
    if to.index() >= map.lps() {
        return Err(MigrationError::UnknownLp(to));
    }
    let from = map.owner(se).ok_or(MigrationError::NoOwner(se))?;
    if from == to {
        return Err(MigrationError::SelfMigration { se, lp: to });
    }
    Ok(from)
}

/// Cost of one executed migration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub step: u64,
    pub entity: SeId,
    pub from: LpId,
    pub to: LpId,
    /// Serialized state plus carried window and pending messages.
    pub bytes: u64,
    /// Wall time from serialization at the source to installation at the target.
    pub transfer_us: u64,
    /// First step the copy executes at its new LP.
    pub resume_step: u64,
}
