//! Per-entity, per-step state hashes used to check executions against each other.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ids::{EntityId, LogicalMsgId, VirtualTime};

pub fn state_hash(state: &[u8]) -> u64 {
    let d = Sha256::digest(state);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DigestMode {
    /// Every entity hash at every step.
    #[default]
    Full,
    /// One combined hash per step; divergences are located to a step only.
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepFrame {
    pub step: u64,
    pub hashes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryDigest {
    pub mode: DigestMode,
    pub entities: Vec<EntityId>,
    pub frames: Vec<StepFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DigestComparison {
    Equal,
    Diverged { step: u64, entity: Option<EntityId> },
    Incompatible(String),
}

fn combine(hashes: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for x in hashes {
        h.update(x.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

impl TrajectoryDigest {
    pub fn empty(mode: DigestMode) -> Self {
        TrajectoryDigest { mode, entities: Vec::new(), frames: Vec::new() }
    }

    /// The same trajectory reduced to one hash per step.
    pub fn summarized(&self) -> TrajectoryDigest {
        match self.mode {
            DigestMode::Summary => self.clone(),
            DigestMode::Full => TrajectoryDigest {
                mode: DigestMode::Summary,
                entities: self.entities.clone(),
                frames: self
                    .frames
                    .iter()
                    .map(|f| StepFrame { step: f.step, hashes: vec![combine(&f.hashes)] })
                    .collect(),
            },
        }
    }

    pub fn compare(&self, other: &TrajectoryDigest) -> DigestComparison {
        if self.entities != other.entities {
            return DigestComparison::Incompatible(format!(
                "entity sets differ ({} vs {} entities)",
                self.entities.len(),
                other.entities.len()
            ));
        }
        let (a, b) = if self.mode == other.mode {
            (self.clone(), other.clone())
        } else {
            (self.summarized(), other.summarized())
        };
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            if fa.step != fb.step {
                return DigestComparison::Incompatible(format!("step sequences differ ({} vs {})", fa.step, fb.step));
            }
            if fa.hashes != fb.hashes {
                let entity = match a.mode {
                    DigestMode::Full => {
                        fa.hashes.iter().zip(&fb.hashes).position(|(x, y)| x != y).map(|i| a.entities[i])
                    }
                    DigestMode::Summary => None,
                };
                return DigestComparison::Diverged { step: fa.step, entity };
            }
        }
        if a.frames.len() != b.frames.len() {
            let step = a.frames.len().min(b.frames.len()) as u64;
            return DigestComparison::Diverged { step, entity: None };
        }
        DigestComparison::Equal
    }

    const MAGIC: &'static [u8; 4] = b"PDIG";

    /// Binary layout (little-endian): `"PDIG"`, version `u8 = 1`, mode `u8`
    /// (0 full, 1 summary), entity count `u64`, entity ids `u64`…, frame count `u64`,
    /// then per frame: step `u64`, hash count `u32`, hashes `u64`….
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&[1, matches!(self.mode, DigestMode::Summary) as u8])?;
        w.write_all(&(self.entities.len() as u64).to_le_bytes())?;
        for e in &self.entities {
            w.write_all(&e.0.to_le_bytes())?;
        }
        w.write_all(&(self.frames.len() as u64).to_le_bytes())?;
        for f in &self.frames {
            w.write_all(&f.step.to_le_bytes())?;
            w.write_all(&(f.hashes.len() as u32).to_le_bytes())?;
            for h in &f.hashes {
                w.write_all(&h.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> io::Result<TrajectoryDigest> {
        fn bad(msg: &str) -> io::Error {
            io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
        }
        fn u64_(r: &mut impl Read) -> io::Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut head = [0u8; 6];
        r.read_exact(&mut head)?;
        if &head[..4] != Self::MAGIC || head[4] != 1 {
            return Err(bad("not a trajectory digest"));
        }
        let mode = match head[5] {
            0 => DigestMode::Full,
            1 => DigestMode::Summary,
            _ => return Err(bad("unknown digest mode")),
        };
        let n = u64_(r)? as usize;
        let entities = (0..n).map(|_| u64_(r).map(EntityId)).collect::<io::Result<Vec<_>>>()?;
        let frames_n = u64_(r)? as usize;
        let mut frames = Vec::with_capacity(frames_n);
        for _ in 0..frames_n {
            let step = u64_(r)?;
            let mut c = [0u8; 4];
            r.read_exact(&mut c)?;
            let count = u32::from_le_bytes(c) as usize;
            let hashes = (0..count).map(|_| u64_(r)).collect::<io::Result<Vec<_>>>()?;
            frames.push(StepFrame { step, hashes });
        }
        Ok(TrajectoryDigest { mode, entities, frames })
    }
}

/// Accumulates out-of-order `(step, entity, hash)` reports into a digest.
#[derive(Debug)]
pub struct DigestBuilder {
    mode: DigestMode,
    n: usize,
    pending: BTreeMap<u64, (usize, Vec<Option<u64>>)>,
    done: BTreeMap<u64, Vec<u64>>,
    mismatches: u64,
}

impl DigestBuilder {
    pub fn new(mode: DigestMode, entities: usize) -> Self {
        DigestBuilder { mode, n: entities, pending: BTreeMap::new(), done: BTreeMap::new(), mismatches: 0 }
    }

    /// Records the hash of `entity` after `step`. A second report for the same
    /// cell (another replica) must agree; disagreements are counted.
    pub fn record(&mut self, step: u64, entity: EntityId, hash: u64) {
        if self.done.contains_key(&step) {
            // Late replica of a completed summary step: cannot be cross-checked.
            if self.mode == DigestMode::Full {
                let h = self.done[&step][entity.index()];
                if h != hash {
                    self.mismatches += 1;
                }
            }
            return;
        }
        let n = self.n;
        let (filled, cells) = self.pending.entry(step).or_insert_with(|| (0, vec![None; n]));
        match cells[entity.index()] {
            Some(h) if h != hash => self.mismatches += 1,
            Some(_) => {}
            None => {
                cells[entity.index()] = Some(hash);
                *filled += 1;
            }
        }
        if *filled == n {
            let (_, cells) = self.pending.remove(&step).unwrap();
            let hashes: Vec<u64> = cells.into_iter().map(|c| c.unwrap()).collect();
            let stored = match self.mode {
                DigestMode::Full => hashes,
                DigestMode::Summary => vec![combine(&hashes)],
            };
            self.done.insert(step, stored);
        }
    }

    /// Replica reports that disagreed with an earlier report for the same cell.
    pub fn mismatches(&self) -> u64 {
        self.mismatches
    }

    pub fn incomplete_steps(&self) -> Vec<u64> {
        self.pending.keys().copied().collect()
    }

    pub fn finish(self) -> TrajectoryDigest {
        TrajectoryDigest {
            mode: self.mode,
            entities: (0..self.n as u64).map(EntityId).collect(),
            frames: self.done.into_iter().map(|(step, hashes)| StepFrame { step, hashes }).collect(),
        }
    }
}

/// Order-independent fingerprint of a multiset of deliveries
/// `(logical message id, receiving entity, receive time)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFingerprint {
    pub count: u64,
    pub sum: u64,
    pub xor: u64,
}

impl EventFingerprint {
    pub fn add(&mut self, id: LogicalMsgId, dst: EntityId, recv_ts: VirtualTime) {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for w in [id.entity.0, id.seq, dst.0, recv_ts.0] {
            h = (h ^ w).wrapping_mul(0x0000_0100_0000_01B3);
            h ^= h >> 29;
            h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        }
        self.count += 1;
        self.sum = self.sum.wrapping_add(h);
        self.xor ^= h.rotate_left(17);
    }

    pub fn merge(&mut self, other: &EventFingerprint) {
        self.count += other.count;
        self.sum = self.sum.wrapping_add(other.sum);
        self.xor ^= other.xor;
    }
}
