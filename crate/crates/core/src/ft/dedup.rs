use serde::{Deserialize, Serialize};

use crate::digest::state_hash;
use crate::ids::{LogicalMsgId, SeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FtMode {
    /// Fail-stop replicas: any copy of a logical message is as good as another.
    Crash,
    /// Copies may be corrupted: a payload is accepted once a strict majority of
    /// the replication degree agrees on it.
    Byzantine,
}

/// One physical copy of a logical message addressed to one receiving replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub dst: SeId,
    pub logical: LogicalMsgId,
    pub src_replica: u16,
    /// Index of the carrying message in the step's input batch.
    pub idx: usize,
}

impl Candidate {
    pub fn key(&self) -> (SeId, LogicalMsgId, u16) {
        (self.dst, self.logical, self.src_replica)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quarantined {
    pub dst: SeId,
    pub logical: LogicalMsgId,
    /// `(payload hash, copies)` in descending vote order.
    pub tally: Vec<(u64, usize)>,
}

/// Duplicate suppression and voting for one receiving LP.
///
/// All copies of a logical message carry the same receive time, so they always
/// meet in the same step batch; the batch is where each `(receiver, logical id)`
/// is applied at most once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DedupState {
    mode: Option<FtMode>,
    replicas: usize,
    pub duplicates: u64,
    pub quarantined: u64,
}

impl DedupState {
    /// No replication: every candidate is delivered as is.
    pub fn disabled() -> Self {
        DedupState { mode: None, replicas: 1, duplicates: 0, quarantined: 0 }
    }

    pub fn new(mode: FtMode, replicas: usize) -> Self {
        DedupState { mode: Some(mode), replicas, duplicates: 0, quarantined: 0 }
    }

    pub fn majority(&self) -> usize {
        self.replicas / 2 + 1
    }

    /// Picks the accepted candidates out of a batch sorted by [`Candidate::key`].
    /// Returns indexes into `cands`.
    pub fn filter<'p>(
        &mut self,
        cands: &[Candidate],
        payload: impl Fn(usize) -> &'p [u8],
        quarantine: &mut Vec<Quarantined>,
    ) -> Vec<usize> {
        let Some(mode) = self.mode else {
            return (0..cands.len()).collect();
        };
        let mut out = Vec::with_capacity(cands.len() / self.replicas.max(1) + 1);
        let mut i = 0;
        while i < cands.len() {
            let mut j = i + 1;
            while j < cands.len() && cands[j].dst == cands[i].dst && cands[j].logical == cands[i].logical {
                j += 1;
            }
            let group = &cands[i..j];
            match mode {
                FtMode::Crash => {
                    out.push(i);
                    self.duplicates += (group.len() - 1) as u64;
                }
                FtMode::Byzantine => {
                    let mut tally: Vec<(u64, usize, usize)> = Vec::new();
                    for (k, c) in group.iter().enumerate() {
                        let h = state_hash(payload(c.idx));
                        match tally.iter_mut().find(|t| t.0 == h) {
                            Some(t) => t.1 += 1,
                            None => tally.push((h, 1, i + k)),
                        }
                    }
                    tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
                    if tally[0].1 >= self.majority() {
                        out.push(tally[0].2);
                        self.duplicates += (group.len() - 1) as u64;
                    } else {
                        self.quarantined += 1;
                        quarantine.push(Quarantined {
                            dst: group[0].dst,
                            logical: group[0].logical,
                            tally: tally.iter().map(|t| (t.0, t.1)).collect(),
                        });
                    }
                }
            }
            i = j;
        }
        out
    }
}
