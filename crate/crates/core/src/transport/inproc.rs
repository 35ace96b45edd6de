use std::sync::Arc;

use crossbeam_channel::{unbounded, Sender};

use super::{Endpoint, Faults, Inbound, Link, Mesh, TransportError};
use crate::ids::LpId;
use crate::message::SimMessage;

struct ChannelLink {
    me: LpId,
    peers: Vec<Option<Sender<Inbound>>>,
}

impl ChannelLink {
    fn broadcast(&mut self, item: Inbound) {
        for tx in self.peers.iter_mut().flatten() {
            let _ = tx.send(item.clone());
        }
        self.peers.iter_mut().for_each(|p| *p = None);
    }
}

impl Link for ChannelLink {
    fn send(&mut self, msg: SimMessage) -> Result<(), TransportError> {
        let dst = msg.dst_lp;
        let tx = self.peers.get(dst.index()).and_then(|p| p.as_ref()).ok_or(TransportError::Down(dst))?;
        tx.send(Inbound::Frame(msg)).map_err(|_| TransportError::Down(dst))
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        Ok(())
    }

    fn close(&mut self) {
        self.broadcast(Inbound::Bye(self.me));
    }

    fn abort(&mut self) {
        self.broadcast(Inbound::LinkDown(self.me));
    }
}

pub(super) fn connect(lps: usize, faults: Arc<Faults>) -> Mesh {
    let (txs, rxs): (Vec<_>, Vec<_>) = (0..lps).map(|_| unbounded()).unzip();
    let endpoints = rxs
        .into_iter()
        .enumerate()
        .map(|(i, rx)| {
            let peers = (0..lps).map(|j| (j != i).then(|| txs[j].clone())).collect();
            let link = ChannelLink { me: LpId(i as u32), peers };
            Endpoint::new(LpId(i as u32), lps, Box::new(link), rx, faults.clone())
        })
        .collect();
    Mesh { endpoints, channels: lps * lps.saturating_sub(1) }
}
