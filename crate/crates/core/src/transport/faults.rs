//! Latency, slowdown, crash and corruption injection.
//!
//! One [`Faults`] object is shared by every endpoint and LP driver of a run; the
//! harness may change it while the run is in progress. Every change and every
//! fired crash is logged with its wall-clock offset.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{LpId, NodeId};
use crate::transport::TransportError;

/// Receive-side delay added to every frame of a link.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum LatencySpec {
    #[default]
    None,
    FixedMs(f64),
    UniformMs(f64, f64),
}

impl LatencySpec {
    pub fn sample(&self, rng: &mut impl Rng) -> Duration {
        let ms = match *self {
            LatencySpec::None => return Duration::ZERO,
            LatencySpec::FixedMs(ms) => ms,
            LatencySpec::UniformMs(a, b) if b > a => rng.gen_range(a..b),
            LatencySpec::UniformMs(a, _) => a,
        };
        Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }

    pub fn is_none(&self) -> bool {
        matches!(self, LatencySpec::None)
    }
}

impl FromStr for LatencySpec {
    type Err = String;

    /// `none`, `fixed:<ms>` or `uniform:<a>:<b>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| format!("bad latency value {p:?} in {s:?}"));
        let spec = match parts.as_slice() {
            ["none"] => LatencySpec::None,
            ["fixed", ms] => LatencySpec::FixedMs(num(ms)?),
            ["uniform", a, b] => LatencySpec::UniformMs(num(a)?, num(b)?),
            _ => return Err(format!("latency must be none, fixed:<ms> or uniform:<a>:<b>, got {s:?}")),
        };
        match spec {
            LatencySpec::FixedMs(v) if v < 0.0 => Err(format!("negative latency in {s:?}")),
            LatencySpec::UniformMs(a, b) if a < 0.0 || b < a => Err(format!("invalid latency range in {s:?}")),
            _ => Ok(spec),
        }
    }
}

impl fmt::Display for LatencySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencySpec::None => write!(f, "none"),
            LatencySpec::FixedMs(ms) => write!(f, "fixed:{ms}"),
            LatencySpec::UniformMs(a, b) => write!(f, "uniform:{a}:{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Injection {
    Latency(LatencySpec),
    /// The LP's step compute time is stretched by `factor`.
    SlowLp {
        lp: LpId,
        factor: f64,
    },
    ClearSlow,
    /// Fail-stop of every LP on `node` when it reaches `step`.
    Crash {
        step: u64,
        node: NodeId,
    },
    /// Outgoing model payloads of `lp` are corrupted.
    Corrupt(LpId),
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Injection::Latency(l) => write!(f, "latency {l}"),
            Injection::SlowLp { lp, factor } => write!(f, "slow {lp} x{factor}"),
            Injection::ClearSlow => write!(f, "slow cleared"),
            Injection::Crash { step, node } => write!(f, "crash {node} at step {step}"),
            Injection::Corrupt(lp) => write!(f, "corrupt payloads from {lp}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub wall_ms: f64,
    pub event: String,
}

#[derive(Debug, Clone, Default)]
struct State {
    latency: LatencySpec,
    slow: Option<(LpId, f64)>,
    crashes: Vec<(u64, NodeId)>,
    corrupt: Option<LpId>,
}

#[derive(Debug)]
pub struct Faults {
    nodes: Vec<NodeId>,
    state: Mutex<State>,
    log: Mutex<Vec<InjectionRecord>>,
    start: Instant,
}

impl Faults {
    /// `nodes[lp]` is the node running each LP.
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Faults { nodes, state: Mutex::new(State::default()), log: Mutex::new(Vec::new()), start: Instant::now() }
    }

    pub fn none(lps: usize) -> Self {
        Self::new((0..lps as u32).map(NodeId).collect())
    }

    pub fn node_of(&self, lp: LpId) -> NodeId {
        self.nodes[lp.index()]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    fn record(&self, event: String) {
        let wall_ms = self.start.elapsed().as_secs_f64() * 1000.0;
        log::info!("injection at {wall_ms:.1} ms: {event}");
        self.log.lock().unwrap().push(InjectionRecord { wall_ms, event });
    }

    pub fn inject(&self, inj: Injection) -> Result<(), TransportError> {
        let lps = self.nodes.len();
        match &inj {
            Injection::SlowLp { lp, .. } | Injection::Corrupt(lp) if lp.index() >= lps => {
                return Err(TransportError::UnknownLp(*lp));
            }
            Injection::Crash { node, .. } if !self.nodes.contains(node) => {
                return Err(TransportError::UnknownNode(*node));
            }
            _ => {}
        }
        {
            let mut s = self.state.lock().unwrap();
            match inj.clone() {
                Injection::Latency(l) => s.latency = l,
                Injection::SlowLp { lp, factor } => s.slow = Some((lp, factor)),
                Injection::ClearSlow => s.slow = None,
                Injection::Crash { step, node } => s.crashes.push((step, node)),
                Injection::Corrupt(lp) => s.corrupt = Some(lp),
            }
        }
        self.record(inj.to_string());
        Ok(())
    }

    pub fn latency(&self) -> LatencySpec {
        self.state.lock().unwrap().latency
    }

    /// Slowdown factor applied to `lp` (1.0 when not slowed).
    pub fn slowdown(&self, lp: LpId) -> f64 {
        match self.state.lock().unwrap().slow {
            Some((s, f)) if s == lp => f.max(1.0),
            _ => 1.0,
        }
    }

    /// Sleeps long enough that a step which took `busy` appears `factor` times slower.
    pub fn throttle(&self, lp: LpId, busy: Duration) {
        let f = self.slowdown(lp);
        if f > 1.0 {
            std::thread::sleep(busy.mul_f64(f - 1.0));
        }
    }

    /// True if `lp`'s node is scheduled to fail at or before `step`.
    pub fn crash_due(&self, lp: LpId, step: u64) -> bool {
        let node = self.node_of(lp);
        self.state.lock().unwrap().crashes.iter().any(|&(s, n)| n == node && s <= step)
    }

    pub fn crash_fired(&self, lp: LpId, step: u64) {
        self.record(format!("{lp} on {} stopped at step {step}", self.node_of(lp)));
    }

    pub fn corrupts(&self, lp: LpId) -> bool {
        self.state.lock().unwrap().corrupt == Some(lp)
    }

    pub fn log(&self) -> Vec<InjectionRecord> {
        self.log.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_specs_parse() {
        assert_eq!("none".parse(), Ok(LatencySpec::None));
        assert_eq!("fixed:2.5".parse(), Ok(LatencySpec::FixedMs(2.5)));
        assert_eq!("uniform:0:5".parse(), Ok(LatencySpec::UniformMs(0.0, 5.0)));
        assert!("uniform:5:1".parse::<LatencySpec>().is_err());
        assert!("gauss:1".parse::<LatencySpec>().is_err());
    }

    #[test]
    fn injections_are_validated_and_logged() {
        let f = Faults::new(vec![NodeId(0), NodeId(1), NodeId(1)]);
        assert_eq!(
            f.inject(Injection::Crash { step: 5, node: NodeId(4) }),
            Err(TransportError::UnknownNode(NodeId(4)))
        );
        assert_eq!(f.inject(Injection::SlowLp { lp: LpId(3), factor: 2.0 }), Err(TransportError::UnknownLp(LpId(3))));
        f.inject(Injection::Crash { step: 5, node: NodeId(1) }).unwrap();
        f.inject(Injection::SlowLp { lp: LpId(2), factor: 4.0 }).unwrap();
        assert!(!f.crash_due(LpId(1), 4));
        assert!(f.crash_due(LpId(2), 5));
        assert!(!f.crash_due(LpId(0), 50));
        assert_eq!(f.slowdown(LpId(2)), 4.0);
        assert_eq!(f.slowdown(LpId(0)), 1.0);
        assert_eq!(f.log().len(), 2);
    }
}
