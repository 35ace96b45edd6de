//! Greedy clustering heuristic with a load-balance band and hysteresis.
//!
//! Each LP proposes moves for the copies it hosts from its own windows. At the
//! fence every LP receives every proposal and runs the same reconciliation, so
//! all LPs derive the same plan without a coordinator.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CommMatrix, MigrationParams};
use crate::ids::{LpId, SeId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub se: SeId,
    pub from: LpId,
    pub to: LpId,
    /// Fraction of the window's traffic exchanged with `to`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub step: u64,
    pub moves: Vec<Proposal>,
}

impl MigrationPlan {
    /// Roster sizes after applying the plan.
    pub fn rosters_after(&self, rosters: &[usize]) -> Vec<usize> {
        let mut r = rosters.to_vec();
        for m in &self.moves {
            r[m.from.index()] -= 1;
            r[m.to.index()] += 1;
        }
        r
    }
}

fn eligible(se: SeId, eval: u64, last_moved: &HashMap<SeId, u64>, hysteresis: u64) -> bool {
    last_moved.get(&se).is_none_or(|&m| eval.saturating_sub(m) > hysteresis)
}

/// Proposals for the copies in `hosted`, which live on `me`, evaluated at step
/// `now` (evaluation number `eval`).
pub fn propose(
    matrix: &CommMatrix,
    hosted: impl IntoIterator<Item = SeId>,
    me: LpId,
    now: u64,
    eval: u64,
    last_moved: &HashMap<SeId, u64>,
    p: &MigrationParams,
) -> Vec<Proposal> {
    let mut out = Vec::new();
    for se in hosted {
        if !eligible(se, eval, last_moved, p.hysteresis) {
            continue;
        }
        let t = matrix.totals(se, now);
        let total = t.total();
        if total == 0 || total < p.min_activity {
            continue;
        }
        let mut best: Option<(usize, u64)> = None;
        for (lp, &c) in t.remote.iter().enumerate() {
            if lp == me.index() {
                continue;
            }
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((lp, c));
            }
        }
        let Some((lp, c)) = best else { continue };
        let score = c as f64 / total as f64;
        if c > 0 && score >= p.threshold {
            out.push(Proposal { se, from: me, to: LpId(lp as u32), score });
        }
    }
    out
}

/// Orders proposals from most to least expendable: lowest score first, then
/// highest id.
fn drop_order(a: &Proposal, b: &Proposal) -> std::cmp::Ordering {
    a.score.partial_cmp(&b.score).unwrap().then(b.se.cmp(&a.se))
}

/// Removes proposals until every roster of an `alive` LP lies in
/// `[(1-β)·mean, (1+β)·mean]`, or no remaining proposal contributes to a
/// violation.
pub fn band_filter(moves: &mut Vec<Proposal>, rosters: &[usize], alive: &[bool], beta: f64) {
    let lps = alive.iter().filter(|a| **a).count();
    if lps == 0 {
        return;
    }
    let mean = rosters.iter().zip(alive).filter(|(_, a)| **a).map(|(r, _)| r).sum::<usize>() as f64 / lps as f64;
    let (lo, hi) = ((1.0 - beta) * mean, (1.0 + beta) * mean);
    moves.sort_by(drop_order);
    let mut after: Vec<i64> = rosters.iter().map(|&r| r as i64).collect();
    for m in moves.iter() {
        after[m.from.index()] -= 1;
        after[m.to.index()] += 1;
    }
    loop {
        let over = |lp: LpId, a: &[i64]| alive[lp.index()] && a[lp.index()] as f64 > hi;
        let under = |lp: LpId, a: &[i64]| alive[lp.index()] && (a[lp.index()] as f64) < lo;
        let Some(i) = moves.iter().position(|m| over(m.to, &after) || under(m.from, &after)) else {
            break;
        };
        let m = moves.remove(i);
        after[m.from.index()] += 1;
        after[m.to.index()] -= 1;
    }
    moves.sort_by_key(|m| m.se);
}

/// Extra constraint applied to a batch of proposed moves.
pub type MoveFilter<'a> = &'a dyn Fn(&[Proposal]) -> Vec<Proposal>;

/// Merges every LP's proposals into one plan. `extra` is an additional
/// constraint filter (replica placement under fault tolerance); it and the
/// band filter alternate until neither drops anything.
pub fn reconcile(
    step: u64,
    moves: Vec<Proposal>,
    rosters: &[usize],
    p: &MigrationParams,
    extra: Option<MoveFilter<'_>>,
) -> MigrationPlan {
    reconcile_among(step, moves, rosters, &vec![true; rosters.len()], p, extra)
}

/// [`reconcile`] with failed LPs excluded from the balance band.
pub fn reconcile_among(
    step: u64,
    mut moves: Vec<Proposal>,
    rosters: &[usize],
    alive: &[bool],
    p: &MigrationParams,
    extra: Option<MoveFilter<'_>>,
) -> MigrationPlan {
    moves.sort_by_key(|m| m.se);
    moves.dedup_by_key(|m| m.se);
    loop {
        let before = moves.len();
        band_filter(&mut moves, rosters, alive, p.balance_band);
        if let Some(f) = extra {
            moves = f(&moves);
        }
        if moves.len() == before {
            break;
        }
    }
    MigrationPlan { step, moves }
}

/// Single-context form of the above: every LP's proposals computed from one
/// shared matrix.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_migrations(
    matrix: &CommMatrix,
    owners: &[(SeId, LpId)],
    rosters: &[usize],
    now: u64,
    eval: u64,
    last_moved: &HashMap<SeId, u64>,
    p: &MigrationParams,
) -> MigrationPlan {
    let mut all = Vec::new();
    for lp in 0..rosters.len() {
        let lp = LpId(lp as u32);
        let hosted = owners.iter().filter(|(_, o)| *o == lp).map(|(se, _)| *se);
        all.extend(propose(matrix, hosted, lp, now, eval, last_moved, p));
    }
    reconcile(now, all, rosters, p, None)
}
