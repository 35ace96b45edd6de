//! LP-to-LP message transport.
//!
//! Both backends deliver into one merged inbox per LP and guarantee exactly-once,
//! FIFO delivery per ordered LP pair. Injected latency is applied on the
//! receiving side per source link and never reorders a link.

pub mod faults;
mod inproc;
mod socket;
pub mod wire;

use std::collections::VecDeque;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, TryRecvError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{LpId, NodeId};
use crate::message::SimMessage;

pub use faults::{Faults, Injection, InjectionRecord, LatencySpec};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("cannot reach {lp} at {addr}: {reason}")]
    Unreachable { lp: LpId, addr: String, reason: String },
    #[error("{lp} cannot listen on {addr}: {reason}")]
    Bind { lp: LpId, addr: String, reason: String },
    #[error("mesh needs {need} endpoints, got {got}")]
    Endpoints { need: usize, got: usize },
    #[error("handshake with {0} failed")]
    Handshake(LpId),
    #[error("unknown {0}")]
    UnknownLp(LpId),
    #[error("unknown {0}")]
    UnknownNode(NodeId),
    #[error("channel to {0} is down")]
    Down(LpId),
    #[error("inbox of {0} closed")]
    InboxClosed(LpId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    InProcess,
    Socket,
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in-process" => Ok(Backend::InProcess),
            "socket" => Ok(Backend::Socket),
            other => Err(format!("unknown transport backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub backend: Backend,
    /// `host:port` per LP for the socket backend; port 0 picks a free port.
    pub endpoints: Vec<String>,
}

/// What an LP reads from its inbox.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Frame(SimMessage),
    /// The peer shut down in an orderly way; nothing more will arrive from it.
    Bye(LpId),
    /// The link to the peer broke without a shutdown marker.
    LinkDown(LpId),
}

impl Inbound {
    fn source(&self) -> LpId {
        match self {
            Inbound::Frame(m) => m.src_lp,
            Inbound::Bye(lp) | Inbound::LinkDown(lp) => *lp,
        }
    }
}

/// Sending half of a backend.
trait Link: Send {
    fn send(&mut self, msg: SimMessage) -> Result<(), TransportError>;
    fn flush(&mut self) -> Result<(), TransportError>;
    /// Orderly shutdown: peers see [`Inbound::Bye`].
    fn close(&mut self);
    /// Fail-stop: peers see [`Inbound::LinkDown`].
    fn abort(&mut self);
}

/// One LP's attachment to the mesh.
pub struct Endpoint {
    lp: LpId,
    lps: usize,
    link: Box<dyn Link>,
    inbox: Receiver<Inbound>,
    faults: Arc<Faults>,
    /// Per source LP: frames waiting out their injected latency.
    delayed: Vec<VecDeque<(Instant, Inbound)>>,
    rng: ChaCha8Rng,
    sent: u64,
    finished: bool,
}

impl Endpoint {
    fn new(lp: LpId, lps: usize, link: Box<dyn Link>, inbox: Receiver<Inbound>, faults: Arc<Faults>) -> Self {
        Endpoint {
            lp,
            lps,
            link,
            inbox,
            faults,
            delayed: vec![VecDeque::new(); lps],
            rng: ChaCha8Rng::seed_from_u64(0x1a7e ^ lp.0 as u64),
            sent: 0,
            finished: false,
        }
    }

    pub fn lp(&self) -> LpId {
        self.lp
    }

    pub fn lps(&self) -> usize {
        self.lps
    }

    pub fn faults(&self) -> &Arc<Faults> {
        &self.faults
    }

    pub fn frames_sent(&self) -> u64 {
        self.sent
    }

    pub fn send(&mut self, msg: SimMessage) -> Result<(), TransportError> {
        debug_assert_ne!(msg.dst_lp, self.lp, "self-addressed frames never hit the transport");
        self.sent += 1;
        self.link.send(msg)
    }

    fn stage(&mut self, item: Inbound) {
        let src = item.source().index();
        let now = Instant::now();
        let extra = match &item {
            Inbound::Frame(_) => self.faults.latency().sample(&mut self.rng),
            _ => Duration::ZERO,
        };
        let q = &mut self.delayed[src];
        let at = q.back().map_or(now + extra, |(prev, _)| (*prev).max(now + extra));
        q.push_back((at, item));
    }

    fn pop_ready(&mut self, now: Instant) -> Option<Inbound> {
        let (src, _) = self
            .delayed
            .iter()
            .enumerate()
            .filter_map(|(i, q)| q.front().map(|(at, _)| (i, *at)))
            .filter(|(_, at)| *at <= now)
            .min_by_key(|(i, at)| (*at, *i))?;
        self.delayed[src].pop_front().map(|(_, x)| x)
    }

    fn next_due(&self) -> Option<Instant> {
        self.delayed.iter().filter_map(|q| q.front().map(|(at, _)| *at)).min()
    }

    fn has_delayed(&self) -> bool {
        self.delayed.iter().any(|q| !q.is_empty())
    }

    /// Next inbound item, waiting at most until `deadline` (forever if `None`).
    pub fn recv_deadline(&mut self, deadline: Option<Instant>) -> Result<Option<Inbound>, TransportError> {
        if self.faults.latency().is_none() && !self.has_delayed() {
            // Fast path: no staging needed.
            return match self.inbox.try_recv() {
                Ok(x) => Ok(Some(x)),
                // Every peer is gone; polling callers just see an empty inbox.
                Err(TryRecvError::Disconnected) if deadline.is_some() => Ok(None),
                Err(TryRecvError::Disconnected) => Err(TransportError::InboxClosed(self.lp)),
                Err(TryRecvError::Empty) => {
                    self.link.flush()?;
                    match deadline {
                        None => self.inbox.recv().map(Some).map_err(|_| TransportError::InboxClosed(self.lp)),
                        Some(d) => match self.inbox.recv_deadline(d) {
                            Ok(x) => Ok(Some(x)),
                            Err(RecvTimeoutError::Timeout) => Ok(None),
                            Err(RecvTimeoutError::Disconnected) => Err(TransportError::InboxClosed(self.lp)),
                        },
                    }
                }
            };
        }
        loop {
            while let Ok(x) = self.inbox.try_recv() {
                self.stage(x);
            }
            let now = Instant::now();
            if let Some(x) = self.pop_ready(now) {
                return Ok(Some(x));
            }
            if deadline.is_some_and(|d| d <= now) {
                return Ok(None);
            }
            self.link.flush()?;
            let wake = match (self.next_due(), deadline) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            let got = match wake {
                None => self.inbox.recv().map_err(|_| RecvTimeoutError::Disconnected),
                Some(w) => self.inbox.recv_deadline(w),
            };
            match got {
                Ok(x) => self.stage(x),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => {
                    if !self.has_delayed() {
                        return Err(TransportError::InboxClosed(self.lp));
                    }
                }
            }
        }
    }

    pub fn recv(&mut self) -> Result<Inbound, TransportError> {
        loop {
            if let Some(x) = self.recv_deadline(None)? {
                return Ok(x);
            }
        }
    }

    pub fn try_recv(&mut self) -> Result<Option<Inbound>, TransportError> {
        self.recv_deadline(Some(Instant::now()))
    }

    pub fn flush(&mut self) -> Result<(), TransportError> {
        self.link.flush()
    }

    /// Orderly shutdown after a completed run.
    pub fn close(mut self) {
        let _ = self.link.flush();
        self.link.close();
        self.finished = true;
    }

    /// Fail-stop: the LP disappears and peers observe a broken link.
    pub fn crash(mut self) {
        self.link.abort();
        self.finished = true;
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        if !self.finished {
            // Unwinding or early return: peers must not wait forever.
            self.link.abort();
        }
    }
}

/// A connected set of endpoints, one per LP.
pub struct Mesh {
    endpoints: Vec<Endpoint>,
    channels: usize,
}

impl Mesh {
    /// Number of directed channels (`n (n - 1)` for `n` LPs).
    pub fn channel_count(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn into_endpoints(self) -> Vec<Endpoint> {
        self.endpoints
    }
}

pub fn connect_mesh(lps: usize, cfg: &TransportConfig, faults: Arc<Faults>) -> Result<Mesh, TransportError> {
    match cfg.backend {
        Backend::InProcess => Ok(inproc::connect(lps, faults)),
        Backend::Socket => socket::connect(lps, &cfg.endpoints, faults),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::VirtualTime;

    fn ctl(src: u32, dst: u32, n: u64) -> SimMessage {
        SimMessage::control(LpId(src), LpId(dst), VirtualTime(n), n.to_le_bytes().to_vec())
    }

    fn mesh(backend: Backend, lps: usize) -> Vec<Endpoint> {
        let cfg = TransportConfig { backend, endpoints: (0..lps).map(|_| "127.0.0.1:0".to_string()).collect() };
        connect_mesh(lps, &cfg, Arc::new(Faults::none(lps))).unwrap().into_endpoints()
    }

    #[test]
    fn three_lps_have_six_channels() {
        let cfg = TransportConfig::default();
        let m = connect_mesh(3, &cfg, Arc::new(Faults::none(3))).unwrap();
        assert_eq!(m.channel_count(), 6);
        let m = connect_mesh(1, &cfg, Arc::new(Faults::none(1))).unwrap();
        assert_eq!(m.channel_count(), 0);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn socket_bad_address_names_the_lp() {
        let cfg = TransportConfig {
            backend: Backend::Socket,
            endpoints: vec!["127.0.0.1:0".into(), "no-such-host.invalid:1".into(), "127.0.0.1:0".into()],
        };
        let err = connect_mesh(3, &cfg, Arc::new(Faults::none(3))).err().unwrap();
        assert!(err.to_string().contains("LP1"), "{err}");
    }

    fn fifo_roundtrip(backend: Backend) {
        let mut eps = mesh(backend, 2);
        let mut b = eps.pop().unwrap();
        let mut a = eps.pop().unwrap();
        for n in 0..200 {
            a.send(ctl(0, 1, n)).unwrap();
        }
        a.flush().unwrap();
        for n in 0..200 {
            match b.recv().unwrap() {
                Inbound::Frame(m) => assert_eq!(m.send_ts.0, n),
                other => panic!("{other:?}"),
            }
        }
        a.close();
        assert_eq!(b.recv().unwrap(), Inbound::Bye(LpId(0)));
    }

    #[test]
    fn in_process_is_fifo() {
        fifo_roundtrip(Backend::InProcess);
    }

    #[test]
    fn socket_is_fifo() {
        fifo_roundtrip(Backend::Socket);
    }

    #[test]
    fn crash_shows_as_link_down() {
        for backend in [Backend::InProcess, Backend::Socket] {
            let mut eps = mesh(backend, 2);
            let mut b = eps.pop().unwrap();
            let mut a = eps.pop().unwrap();
            a.send(ctl(0, 1, 1)).unwrap();
            a.crash();
            assert!(matches!(b.recv().unwrap(), Inbound::Frame(_)));
            assert_eq!(b.recv().unwrap(), Inbound::LinkDown(LpId(0)));
        }
    }

    #[test]
    fn latency_keeps_link_order() {
        let faults = Arc::new(Faults::none(2));
        faults.inject(Injection::Latency(LatencySpec::UniformMs(0.0, 2.0))).unwrap();
        let mut eps = connect_mesh(2, &TransportConfig::default(), faults).unwrap().into_endpoints();
        let mut b = eps.pop().unwrap();
        let mut a = eps.pop().unwrap();
        let start = Instant::now();
        for n in 0..50 {
            a.send(ctl(0, 1, n)).unwrap();
        }
        for n in 0..50 {
            match b.recv().unwrap() {
                Inbound::Frame(m) => assert_eq!(m.send_ts.0, n),
                other => panic!("{other:?}"),
            }
        }
        assert!(start.elapsed() < Duration::from_secs(5));
    }
}
