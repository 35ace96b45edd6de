//! TCP backend: one stream per ordered LP pair, carrying [`super::wire`] frames.
//!
//! The connecting side opens every stream with a handshake of `b"PDSM"` and its
//! `LpId` as `u32` LE. A reader thread per inbound stream decodes frames into the
//! LP's merged inbox; end of stream without a shutdown frame surfaces as
//! [`Inbound::LinkDown`].

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{unbounded, Sender};

use super::wire::{read_frame, write_bye, write_frame};
use super::{Endpoint, Faults, Inbound, Link, Mesh, TransportError};
use crate::ids::LpId;
use crate::message::SimMessage;

const MAGIC: &[u8; 4] = b"PDSM";
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

struct SocketLink {
    writers: Vec<Option<BufWriter<TcpStream>>>,
}

impl SocketLink {
    fn shutdown_all(&mut self) {
        for w in self.writers.iter_mut().flatten() {
            let _ = w.flush();
            let _ = w.get_ref().shutdown(Shutdown::Write);
        }
        self.writers.iter_mut().for_each(|w| *w = None);
    }
}

impl Link for SocketLink {
    fn send(&mut self, msg: SimMessage) -> Result<(), TransportError> {
        let dst = msg.dst_lp;
        let w = self.writers.get_mut(dst.index()).and_then(|w| w.as_mut()).ok_or(TransportError::Down(dst))?;
        write_frame(w, &msg).map_err(|_| TransportError::Down(dst))
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        for (j, w) in self.writers.iter_mut().enumerate() {
            if let Some(w) = w {
                w.flush().map_err(|_| TransportError::Down(LpId(j as u32)))?;
            }
        }
        Ok(())
    }

    fn close(&mut self) {
        for w in self.writers.iter_mut().flatten() {
            let _ = write_bye(w);
        }
        self.shutdown_all();
    }

    fn abort(&mut self) {
        self.shutdown_all();
    }
}

fn reader(stream: TcpStream, from: LpId, inbox: Sender<Inbound>) {
    let mut r = BufReader::with_capacity(1 << 16, stream);
    let mut bye = false;
    loop {
        match read_frame(&mut r) {
            Ok(Some(m)) => {
                if inbox.send(Inbound::Frame(m)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                bye = true;
                let _ = inbox.send(Inbound::Bye(from));
            }
            Err(_) => {
                if !bye {
                    let _ = inbox.send(Inbound::LinkDown(from));
                }
                return;
            }
        }
    }
}

fn resolve(lp: LpId, ep: &str) -> Result<SocketAddr, TransportError> {
    let unreachable = |reason: String| TransportError::Unreachable { lp, addr: ep.to_string(), reason };
    ep.to_socket_addrs()
        .map_err(|e| unreachable(e.to_string()))?
        .next()
        .ok_or_else(|| unreachable("address resolves to nothing".into()))
}

pub(super) fn connect(lps: usize, endpoints: &[String], faults: Arc<Faults>) -> Result<Mesh, TransportError> {
    if endpoints.len() != lps {
        return Err(TransportError::Endpoints { need: lps, got: endpoints.len() });
    }
    let mut resolved = Vec::with_capacity(lps);
    for (i, ep) in endpoints.iter().enumerate() {
        resolved.push(resolve(LpId(i as u32), ep)?);
    }
    let mut listeners = Vec::with_capacity(lps);
    let mut addrs = Vec::with_capacity(lps);
    for (i, addr) in resolved.iter().enumerate() {
        let lp = LpId(i as u32);
        let l = TcpListener::bind(addr).map_err(|e| TransportError::Bind {
            lp,
            addr: endpoints[i].clone(),
            reason: e.to_string(),
        })?;
        addrs.push(l.local_addr().expect("bound listener has an address"));
        listeners.push(l);
    }

    let (txs, rxs): (Vec<_>, Vec<_>) = (0..lps).map(|_| unbounded::<Inbound>()).unzip();
    let acceptors: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let tx = txs[i].clone();
            thread::spawn(move || -> Result<(), TransportError> {
                for _ in 1..lps {
                    let (mut s, _) = l.accept().map_err(|_| TransportError::Handshake(LpId(i as u32)))?;
                    let mut hs = [0u8; 8];
                    s.read_exact(&mut hs).map_err(|_| TransportError::Handshake(LpId(i as u32)))?;
                    if &hs[..4] != MAGIC {
                        return Err(TransportError::Handshake(LpId(i as u32)));
                    }
                    let from = LpId(u32::from_le_bytes(hs[4..].try_into().unwrap()));
                    let _ = s.set_nodelay(true);
                    let tx = tx.clone();
                    thread::Builder::new()
                        .name(format!("rx-{from}-{i}"))
                        .spawn(move || reader(s, from, tx))
                        .expect("spawn reader");
                }
                Ok(())
            })
        })
        .collect();
    drop(txs);

    let mut links = Vec::with_capacity(lps);
    let mut failure = None;
    for i in 0..lps {
        let mut writers: Vec<Option<BufWriter<TcpStream>>> = (0..lps).map(|_| None).collect();
        for j in (0..lps).filter(|&j| j != i) {
            let peer = LpId(j as u32);
            match TcpStream::connect_timeout(&addrs[j], CONNECT_TIMEOUT) {
                Ok(mut s) => {
                    let _ = s.set_nodelay(true);
                    let mut hs = MAGIC.to_vec();
                    hs.extend_from_slice(&(i as u32).to_le_bytes());
                    if s.write_all(&hs).is_err() {
                        failure.get_or_insert(TransportError::Handshake(peer));
                    }
                    writers[j] = Some(BufWriter::with_capacity(1 << 16, s));
                }
                Err(e) => {
                    failure.get_or_insert(TransportError::Unreachable {
                        lp: peer,
                        addr: endpoints[j].clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        links.push(SocketLink { writers });
    }
    if let Some(err) = failure {
        // Unblock acceptors still waiting for connections that will never come.
        drop(links);
        for a in &addrs {
            for _ in 1..lps {
                let _ = TcpStream::connect_timeout(a, Duration::from_millis(100));
            }
        }
        return Err(err);
    }
    for a in acceptors {
        a.join().expect("acceptor thread")?;
    }

    let endpoints = links
        .into_iter()
        .zip(rxs)
        .enumerate()
        .map(|(i, (link, rx))| Endpoint::new(LpId(i as u32), lps, Box::new(link), rx, faults.clone()))
        .collect();
    Ok(Mesh { endpoints, channels: lps * lps.saturating_sub(1) })
}
