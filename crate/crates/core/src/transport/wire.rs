//! Binary framing of [`SimMessage`] for stream transports.
//!
//! A frame is `len: u32` followed by `len` bytes of envelope. A zero-length frame
//! is the orderly-shutdown marker. Envelope layout, all integers little-endian:
//!
//! | offset | size | field                 |
//! |-------:|-----:|-----------------------|
//! | 0      | 1    | kind                  |
//! | 1      | 8    | msg_id.src.entity     |
//! | 9      | 2    | msg_id.src.replica    |
//! | 11     | 8    | msg_id.seq            |
//! | 19     | 8    | src.entity            |
//! | 27     | 2    | src.replica           |
//! | 29     | 8    | dst.entity            |
//! | 37     | 2    | dst.replica           |
//! | 39     | 4    | src_lp                |
//! | 43     | 4    | dst_lp                |
//! | 47     | 8    | send_ts               |
//! | 55     | 8    | recv_ts               |
//! | 63     | 4    | payload length        |
//! | 67     | n    | payload               |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::ids::{EntityId, LpId, MsgId, SeId, VirtualTime};
use crate::message::{MsgKind, SimMessage};

pub const HEADER_LEN: usize = 67;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("envelope truncated: {got} bytes, need {need}")]
    Truncated { got: usize, need: usize },
    #[error("envelope has {0} trailing bytes")]
    Trailing(usize),
}

pub fn encode(msg: &SimMessage) -> Vec<u8> {
    let mut b = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    b.push(msg.kind as u8);
    b.extend_from_slice(&msg.id.src.entity.0.to_le_bytes());
    b.extend_from_slice(&msg.id.src.replica.to_le_bytes());
    b.extend_from_slice(&msg.id.seq.to_le_bytes());
    for se in [msg.src, msg.dst] {
        b.extend_from_slice(&se.entity.0.to_le_bytes());
        b.extend_from_slice(&se.replica.to_le_bytes());
    }
    b.extend_from_slice(&msg.src_lp.0.to_le_bytes());
    b.extend_from_slice(&msg.dst_lp.0.to_le_bytes());
    b.extend_from_slice(&msg.send_ts.0.to_le_bytes());
    b.extend_from_slice(&msg.recv_ts.0.to_le_bytes());
    b.extend_from_slice(&(msg.payload.len() as u32).to_le_bytes());
    b.extend_from_slice(&msg.payload);
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn se(&mut self) -> SeId {
        let entity = EntityId(self.u64());
        SeId::new(entity, self.u16())
    }
}

pub fn decode(buf: &[u8]) -> Result<SimMessage, WireError> {
    if buf.len() < HEADER_LEN {
        return Err(WireError::Truncated { got: buf.len(), need: HEADER_LEN });
    }
    let kind = MsgKind::from_u8(buf[0]).ok_or(WireError::UnknownKind(buf[0]))?;
    let mut c = Cursor { buf, pos: 1 };
    let id = MsgId { src: c.se(), seq: c.u64() };
    let src = c.se();
    let dst = c.se();
    let src_lp = LpId(c.u32());
    let dst_lp = LpId(c.u32());
    let send_ts = VirtualTime(c.u64());
    let recv_ts = VirtualTime(c.u64());
    let len = c.u32() as usize;
    let need = HEADER_LEN + len;
    if buf.len() < need {
        return Err(WireError::Truncated { got: buf.len(), need });
    }
    if buf.len() > need {
        return Err(WireError::Trailing(buf.len() - need));
    }
    Ok(SimMessage { id, kind, src, dst, src_lp, dst_lp, send_ts, recv_ts, payload: buf[HEADER_LEN..].to_vec() })
}

/// Writes one length-prefixed frame.
pub fn write_frame(w: &mut impl Write, msg: &SimMessage) -> io::Result<()> {
    let body = encode(msg);
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(&body)
}

pub fn write_bye(w: &mut impl Write) -> io::Result<()> {
    w.write_all(&0u32.to_le_bytes())
}

/// Reads one frame; `Ok(None)` is the shutdown marker.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<SimMessage>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 {
        return Ok(None);
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
