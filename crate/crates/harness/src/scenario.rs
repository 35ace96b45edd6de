//! Scenario documents: flat key/value TOML with dotted section keys.
//!
//! Every key has a default, so an empty document is the full mobile-host
//! scenario on three LPs. Keys that the chosen model or protocol does not use
//! are rejected along with misspelled ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use padsim_core::digest::DigestMode;
use padsim_core::ft::{FtMode, FtParams};
use padsim_core::migration::MigrationParams;
use padsim_core::sync::{ProtocolKind, SyncParams, Topology};
use padsim_core::transport::{Backend, Injection, LatencySpec, TransportConfig};
use padsim_core::{LpId, NodeId};
use padsim_models::{Allocation, MhParams};
use thiserror::Error;
use toml::Value;

pub type Pairs = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for KeyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} is not valid TOML: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("malformed override {0:?}, expected key=value")]
    Override(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Keys(Vec<KeyError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// The single-threaded reference executor.
    Sequential,
    Parallel(ProtocolKind),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Sequential => f.write_str("sequential"),
            Protocol::Parallel(p) => p.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    MobileHosts { params: MhParams, allocation: Allocation },
    Groups,
    Idle { per_lp: u64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaultPlan {
    /// Node of each LP; empty means one node per LP.
    pub nodes: Vec<NodeId>,
    pub crashes: Vec<(NodeId, u64)>,
    pub slow: Option<(LpId, f64)>,
    pub latency: LatencySpec,
    pub corrupt: Option<LpId>,
}

impl FaultPlan {
    pub fn injections(&self) -> Vec<Injection> {
        let mut out = Vec::new();
        if !self.latency.is_none() {
            out.push(Injection::Latency(self.latency));
        }
        if let Some((lp, factor)) = self.slow {
            out.push(Injection::SlowLp { lp, factor });
        }
        for &(node, step) in &self.crashes {
            out.push(Injection::Crash { step, node });
        }
        if let Some(lp) = self.corrupt {
            out.push(Injection::Corrupt(lp));
        }
        out
    }

    pub fn node_map(&self, lps: usize) -> Vec<NodeId> {
        if self.nodes.is_empty() {
            (0..lps as u32).map(NodeId).collect()
        } else {
            self.nodes.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub lps: usize,
    pub horizon: u64,
    pub snapshot_steps: BTreeSet<u64>,
    pub digest: DigestMode,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub protocol: Protocol,
    pub sync: SyncParams,
    pub gaia: MigrationParams,
    pub ft: FtParams,
    pub transport: TransportConfig,
    pub faults: FaultPlan,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            lps: 3,
            horizon: 1000,
            snapshot_steps: BTreeSet::new(),
            digest: DigestMode::Full,
            out: None,
            model: ModelConfig::MobileHosts { params: MhParams::default(), allocation: Allocation::Random },
            protocol: Protocol::Parallel(ProtocolKind::TimeStepped),
            sync: SyncParams::default(),
            gaia: MigrationParams::default(),
            ft: FtParams::default(),
            transport: TransportConfig::default(),
            faults: FaultPlan::default(),
        }
    }
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: toml::Table, out: &mut Pairs) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            v => {
                out.insert(key, v);
            }
        }
    }
}

pub fn parse_pairs(text: &str, origin: &Path) -> Result<Pairs, ScenarioError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::Syntax { path: origin.into(), message: e.to_string() })?;
    let mut pairs = Pairs::new();
    flatten("", table, &mut pairs);
    Ok(pairs)
}

/// `key=value`; the value is read as a TOML value, or as a bare string if it
/// is not one.
pub fn parse_override(s: &str) -> Result<(String, Value), ScenarioError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ScenarioError::Override(s.into()))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(ScenarioError::Override(s.into()));
    }
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Renders dotted pairs back into a TOML document.
pub fn render_pairs(pairs: &Pairs) -> String {
    let mut root = toml::Table::new();
    for (k, v) in pairs {
        let mut parts: Vec<&str> = k.split('.').collect();
        let last = parts.pop().unwrap();
        let mut t = &mut root;
        for p in parts {
            t = t.entry(p).or_insert_with(|| Value::Table(toml::Table::new())).as_table_mut().unwrap();
        }
        t.insert(last.to_string(), v.clone());
    }
    toml::to_string(&root).expect("scenario tables always serialize")
}

/// Hands out typed values and remembers which keys were consumed and what went wrong.
struct Reader {
    pairs: Pairs,
    errors: Vec<KeyError>,
}

impl Reader {
    fn fail(&mut self, key: &str, message: impl Into<String>) {
        self.errors.push(KeyError { key: key.into(), message: message.into() });
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.pairs.remove(key)
    }

    fn int(&mut self, key: &str, into: &mut u64) {
        match self.take(key) {
            None => {}
            Some(Value::Integer(i)) if i >= 0 => *into = i as u64,
            Some(v) => self.fail(key, format!("expected a non-negative integer, got {v}")),
        }
    }

    fn usize(&mut self, key: &str, into: &mut usize) {
        let mut v = *into as u64;
        self.int(key, &mut v);
        *into = v as usize;
    }

    fn float(&mut self, key: &str, into: &mut f64) {
        match self.take(key) {
            None => {}
            Some(Value::Float(f)) if f.is_finite() => *into = f,
            Some(Value::Integer(i)) => *into = i as f64,
            Some(v) => self.fail(key, format!("expected a number, got {v}")),
        }
    }

    fn bool(&mut self, key: &str, into: &mut bool) {
        match self.take(key) {
            None => {}
            Some(Value::Boolean(b)) => *into = b,
            Some(v) => self.fail(key, format!("expected true or false, got {v}")),
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.take(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(v) => {
                self.fail(key, format!("expected a string, got {v}"));
                None
            }
        }
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&mut self, key: &str, into: &mut T) {
        if let Some(s) = self.string(key) {
            match s.parse() {
                Ok(v) => *into = v,
                Err(e) => self.fail(key, e),
            }
        }
    }

    fn list(&mut self, key: &str) -> Option<Vec<Value>> {
        match self.take(key) {
            None => None,
            Some(Value::Array(a)) => Some(a),
            Some(v) => {
                self.fail(key, format!("expected an array, got {v}"));
                None
            }
        }
    }

    fn int_list(&mut self, key: &str) -> Option<Vec<u64>> {
        let items = self.list(key)?;
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            match v {
                Value::Integer(i) if i >= 0 => out.push(i as u64),
                v => {
                    self.fail(key, format!("expected non-negative integers, got {v}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn string_list(&mut self, key: &str) -> Option<Vec<String>> {
        let items = self.list(key)?;
        let mut out = Vec::with_capacity(items.len());
        for v in items {
            match v {
                Value::String(s) => out.push(s),
                v => {
                    self.fail(key, format!("expected strings, got {v}"));
                    return None;
                }
            }
        }
        Some(out)
    }
}

fn parse_crash(s: &str) -> Result<(NodeId, u64), String> {
    let (n, t) = s.split_once('@').ok_or_else(|| format!("crash {s:?} must look like <node>@<step>"))?;
    let n: u32 = n.trim().parse().map_err(|_| format!("bad node in crash {s:?}"))?;
    let t: u64 = t.trim().parse().map_err(|_| format!("bad step in crash {s:?}"))?;
    Ok((NodeId(n), t))
}

fn parse_slow(s: &str) -> Result<(LpId, f64), String> {
    let (lp, f) = s.split_once('x').ok_or_else(|| format!("slow {s:?} must look like <lp>x<factor>"))?;
    let lp: u32 = lp.trim().parse().map_err(|_| format!("bad LP in slow {s:?}"))?;
    let f: f64 = f.trim().parse().map_err(|_| format!("bad factor in slow {s:?}"))?;
    if !(f >= 1.0 && f.is_finite()) {
        return Err(format!("slowdown factor must be at least 1, got {f}"));
    }
    Ok((LpId(lp), f))
}

impl Scenario {
    pub fn from_pairs(pairs: Pairs) -> Result<Scenario, ScenarioError> {
        let mut r = Reader { pairs, errors: Vec::new() };
        let mut s = Scenario::default();

        r.int("seed", &mut s.seed);
        r.usize("lps", &mut s.lps);
        r.int("horizon", &mut s.horizon);
        if let Some(steps) = r.int_list("snapshot_steps") {
            s.snapshot_steps = steps.into_iter().collect();
        }
        if let Some(d) = r.string("digest") {
            match d.as_str() {
                "full" => s.digest = DigestMode::Full,
                "summary" => s.digest = DigestMode::Summary,
                other => r.fail("digest", format!("expected full or summary, got {other:?}")),
            }
        }
        s.out = r.string("out").map(PathBuf::from);

        let kind = r.string("model.kind").unwrap_or_else(|| "mobile-hosts".into());
        s.model = match kind.as_str() {
            "mobile-hosts" => {
                let mut p = MhParams::default();
                let mut allocation = Allocation::Random;
                r.int("model.n_hosts", &mut p.n_hosts);
                r.float("model.side", &mut p.side);
                r.float("model.radius", &mut p.radius);
                r.float("model.max_speed", &mut p.max_speed);
                r.float("model.min_speed", &mut p.min_speed);
                r.float("model.move_fraction", &mut p.move_fraction);
                r.float("model.broadcast_fraction", &mut p.broadcast_fraction);
                r.parsed("model.allocation", &mut allocation);
                if let Err(e) = p.validate() {
                    r.fail("model", e.to_string());
                }
                ModelConfig::MobileHosts { params: p, allocation }
            }
            "groups" => ModelConfig::Groups,
            "idle" => {
                let mut per_lp = 1;
                r.int("model.per_lp", &mut per_lp);
                ModelConfig::Idle { per_lp }
            }
            other => {
                r.fail("model.kind", format!("expected mobile-hosts, groups or idle, got {other:?}"));
                ModelConfig::Groups
            }
        };

        if let Some(p) = r.string("sync.protocol") {
            match p.as_str() {
                "sequential" => s.protocol = Protocol::Sequential,
                other => match other.parse() {
                    Ok(k) => s.protocol = Protocol::Parallel(k),
                    Err(e) => {
                        r.fail("sync.protocol", format!("{e}; expected sequential, time-stepped, cmb or time-warp"))
                    }
                },
            }
        }
        if let Protocol::Parallel(k) = s.protocol {
            s.sync.protocol = k;
        }
        r.int("sync.lookahead", &mut s.sync.lookahead);
        r.int("sync.checkpoint_every", &mut s.sync.checkpoint_every);
        r.int("sync.gvt_every", &mut s.sync.gvt_every);
        let mut topo = Topology::Mesh;
        r.parsed("sync.topology", &mut topo);
        s.sync.topology = topo;

        r.bool("gaia.enabled", &mut s.gaia.enabled);
        r.usize("gaia.window", &mut s.gaia.window);
        r.int("gaia.eval_every", &mut s.gaia.eval_every);
        r.float("gaia.threshold", &mut s.gaia.threshold);
        r.int("gaia.min_activity", &mut s.gaia.min_activity);
        r.float("gaia.balance_band", &mut s.gaia.balance_band);
        r.int("gaia.hysteresis", &mut s.gaia.hysteresis);

        r.bool("ft.enabled", &mut s.ft.enabled);
        r.usize("ft.replicas", &mut s.ft.replicas);
        if let Some(m) = r.string("ft.mode") {
            match m.as_str() {
                "crash" => s.ft.mode = FtMode::Crash,
                "byzantine" => s.ft.mode = FtMode::Byzantine,
                other => r.fail("ft.mode", format!("expected crash or byzantine, got {other:?}")),
            }
        }
        r.float("ft.barrier_timeout_s", &mut s.ft.barrier_timeout_s);
        r.bool("ft.rereplicate", &mut s.ft.rereplicate);

        let mut backend = Backend::InProcess;
        r.parsed("transport.backend", &mut backend);
        s.transport.backend = backend;
        if let Some(e) = r.string_list("transport.endpoints") {
            s.transport.endpoints = e;
        }
        r.parsed("transport.latency", &mut s.faults.latency);

        if let Some(nodes) = r.int_list("faults.nodes") {
            s.faults.nodes = nodes.into_iter().map(|n| NodeId(n as u32)).collect();
        }
        for c in r.string_list("faults.crash").unwrap_or_default() {
            match parse_crash(&c) {
                Ok(x) => s.faults.crashes.push(x),
                Err(e) => r.fail("faults.crash", e),
            }
        }
        if let Some(sl) = r.string("faults.slow") {
            match parse_slow(&sl) {
                Ok(x) => s.faults.slow = Some(x),
                Err(e) => r.fail("faults.slow", e),
            }
        }
        let mut corrupt = u64::MAX;
        r.int("faults.corrupt_lp", &mut corrupt);
        if corrupt != u64::MAX {
            s.faults.corrupt = Some(LpId(corrupt as u32));
        }

        let leftover: Vec<String> = r.pairs.keys().cloned().collect();
        for key in leftover {
            let hint = match key.split_once('.') {
                Some(("model", _)) => format!("unknown key for model.kind = {kind}"),
                _ => "unknown key".to_string(),
            };
            r.fail(&key, hint);
        }
        s.check(&mut r);
        if r.errors.is_empty() {
            Ok(s)
        } else {
            Err(ScenarioError::Keys(r.errors))
        }
    }

    /// Cross-key constraints that the engine would otherwise report without a key.
    fn check(&self, r: &mut Reader) {
        if self.lps == 0 {
            r.fail("lps", "must be at least 1");
        }
        if self.horizon == 0 {
            r.fail("horizon", "must be at least 1");
        }
        if matches!(self.model, ModelConfig::Groups) && self.lps != 3 {
            r.fail("lps", "the groups model runs on exactly 3 LPs");
        }
        if let Some(&t) = self.snapshot_steps.iter().find(|&&t| t > self.horizon) {
            r.fail("snapshot_steps", format!("step {t} is beyond the horizon {}", self.horizon));
        }
        if !self.faults.nodes.is_empty() && self.faults.nodes.len() != self.lps {
            r.fail("faults.nodes", format!("lists {} nodes for {} LPs", self.faults.nodes.len(), self.lps));
        }
        if self.transport.backend == Backend::Socket && self.transport.endpoints.len() != self.lps {
            r.fail(
                "transport.endpoints",
                format!(
                    "the socket backend needs one endpoint per LP, got {} for {}",
                    self.transport.endpoints.len(),
                    self.lps
                ),
            );
        }
        if self.protocol == Protocol::Sequential {
            let f = &self.faults;
            if self.gaia.enabled {
                r.fail("gaia.enabled", "the sequential executor has a fixed placement");
            }
            if self.ft.enabled {
                r.fail("ft.enabled", "the sequential executor does not replicate");
            }
            if !f.crashes.is_empty() || f.slow.is_some() || f.corrupt.is_some() || !f.latency.is_none() {
                r.fail("faults", "fault injection needs a parallel protocol");
            }
        }
        if self.ft.enabled && self.sync.protocol != ProtocolKind::TimeStepped {
            r.fail("ft.enabled", "replication requires sync.protocol = time-stepped");
        }
    }

    /// Every key with its effective value; feeding this back reproduces the scenario.
    pub fn to_pairs(&self) -> Pairs {
        let mut p = Pairs::new();
        let mut put = |k: &str, v: Value| {
            p.insert(k.to_string(), v);
        };
        let int = |v: u64| Value::Integer(v as i64);
        let s = |v: &str| Value::String(v.to_string());
        put("seed", int(self.seed));
        put("lps", int(self.lps as u64));
        put("horizon", int(self.horizon));
        put("snapshot_steps", Value::Array(self.snapshot_steps.iter().map(|&t| int(t)).collect()));
        put("digest", s(if self.digest == DigestMode::Full { "full" } else { "summary" }));
        if let Some(out) = &self.out {
            put("out", s(&out.to_string_lossy()));
        }
        match &self.model {
            ModelConfig::MobileHosts { params, allocation } => {
                put("model.kind", s("mobile-hosts"));
                put("model.n_hosts", int(params.n_hosts));
                put("model.side", Value::Float(params.side));
                put("model.radius", Value::Float(params.radius));
                put("model.max_speed", Value::Float(params.max_speed));
                put("model.min_speed", Value::Float(params.min_speed));
                put("model.move_fraction", Value::Float(params.move_fraction));
                put("model.broadcast_fraction", Value::Float(params.broadcast_fraction));
                put("model.allocation", s(&allocation.to_string()));
            }
            ModelConfig::Groups => put("model.kind", s("groups")),
            ModelConfig::Idle { per_lp } => {
                put("model.kind", s("idle"));
                put("model.per_lp", int(*per_lp));
            }
        }
        put("sync.protocol", s(&self.protocol.to_string()));
        put("sync.lookahead", int(self.sync.lookahead));
        put("sync.checkpoint_every", int(self.sync.checkpoint_every));
        put("sync.gvt_every", int(self.sync.gvt_every));
        put("sync.topology", s(if self.sync.topology == Topology::Ring { "ring" } else { "mesh" }));
        put("gaia.enabled", Value::Boolean(self.gaia.enabled));
        put("gaia.window", int(self.gaia.window as u64));
        put("gaia.eval_every", int(self.gaia.eval_every));
        put("gaia.threshold", Value::Float(self.gaia.threshold));
        put("gaia.min_activity", int(self.gaia.min_activity));
        put("gaia.balance_band", Value::Float(self.gaia.balance_band));
        put("gaia.hysteresis", int(self.gaia.hysteresis));
        put("ft.enabled", Value::Boolean(self.ft.enabled));
        put("ft.replicas", int(self.ft.replicas as u64));
        put("ft.mode", s(if self.ft.mode == FtMode::Crash { "crash" } else { "byzantine" }));
        put("ft.barrier_timeout_s", Value::Float(self.ft.barrier_timeout_s));
        put("ft.rereplicate", Value::Boolean(self.ft.rereplicate));
        put("transport.backend", s(if self.transport.backend == Backend::Socket { "socket" } else { "in-process" }));
        put("transport.endpoints", Value::Array(self.transport.endpoints.iter().map(|e| s(e)).collect()));
        put("transport.latency", s(&self.faults.latency.to_string()));
        put("faults.nodes", Value::Array(self.faults.nodes.iter().map(|n| int(n.0 as u64)).collect()));
        put(
            "faults.crash",
            Value::Array(self.faults.crashes.iter().map(|(n, t)| s(&format!("{}@{t}", n.0))).collect()),
        );
        if let Some((lp, f)) = self.faults.slow {
            put("faults.slow", s(&format!("{}x{f}", lp.0)));
        }
        if let Some(lp) = self.faults.corrupt {
            put("faults.corrupt_lp", int(lp.0 as u64));
        }
        p
    }

    /// Reads a scenario file, or the scenario recorded in a run manifest, and
    /// applies overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let doc = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| ScenarioError::Syntax { path: path.into(), message: e.to_string() })?;
            v.get("scenario")
                .and_then(|s| s.as_str())
                .ok_or_else(|| ScenarioError::Syntax { path: path.into(), message: "no scenario field".into() })?
                .to_string()
        } else {
            text
        };
        let mut pairs = parse_pairs(&doc, path)?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            pairs.insert(k, v);
        }
        Scenario::from_pairs(pairs)
    }

    pub fn run_config(&self) -> padsim_core::RunConfig {
        padsim_core::RunConfig {
            horizon: self.horizon,
            seed: self.seed,
            sync: self.sync,
            gaia: self.gaia,
            ft: self.ft,
            transport: self.transport.clone(),
            snapshot_steps: self.snapshot_steps.clone(),
            digest_mode: self.digest,
            ..Default::default()
        }
    }
}
