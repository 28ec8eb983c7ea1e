//! Frame encoding.
//!
//! Data frame: `u32` little-endian record count, then that many 8-byte
//! records, each most significant byte first. A count of `0xFFFFFFFF` is an
//! error reply; the server closes the connection after sending it.
//!
//! Request frame (request mode only): `u8` opcode, then the `u64`
//! little-endian sequence number of the first record the client has not yet
//! received. The only opcode is [`OP_FETCH`].

use std::io::{self, Read, Write};

use super::StreamError;

pub const OP_FETCH: u8 = 0x01;
pub const ERROR_COUNT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Request {
    pub opcode: u8,
    pub ack: u64,
}

#[derive(Debug, PartialEq, Eq)]
pub enum Frame {
    Records,
    Error,
    /// Clean end of stream at a frame boundary.
    End,
}

pub fn write_frame<W: Write>(w: &mut W, records: &[u64], scratch: &mut Vec<u8>) -> io::Result<()> {
    let count = u32::try_from(records.len())
        .ok()
        .filter(|&c| c != ERROR_COUNT)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    scratch.clear();
    scratch.reserve(4 + records.len() * 8);
    scratch.extend_from_slice(&count.to_le_bytes());
    for r in records {
        scratch.extend_from_slice(&r.to_be_bytes());
    }
    w.write_all(scratch)
}

pub fn write_error<W: Write>(w: &mut W) -> io::Result<()> {
    w.write_all(&ERROR_COUNT.to_le_bytes())?;
    w.flush()
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on EOF before the first byte.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Reads one data frame, appending its records to `out`.
pub fn read_frame<R: Read>(r: &mut R, out: &mut Vec<u64>, scratch: &mut Vec<u8>) -> Result<Frame, StreamError> {
    let mut head = [0u8; 4];
    if !read_full(r, &mut head)? {
        return Ok(Frame::End);
    }
    let count = u32::from_le_bytes(head);
    if count == ERROR_COUNT {
        return Ok(Frame::Error);
    }
    scratch.resize(count as usize * 8, 0);
    if !read_full(r, scratch)? && count > 0 {
        return Err(StreamError::Malformed("connection closed inside a frame".into()));
    }
    out.extend(
        scratch
            .chunks_exact(8)
            .map(|c| u64::from_be_bytes(c.try_into().unwrap())),
    );
    Ok(Frame::Records)
}

pub fn write_request<W: Write>(w: &mut W, req: Request) -> io::Result<()> {
    let mut buf = [0u8; 9];
    buf[0] = req.opcode;
    buf[1..].copy_from_slice(&req.ack.to_le_bytes());
    w.write_all(&buf)?;
    w.flush()
}

/// `Ok(None)` on a clean close between requests.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<Request>, StreamError> {
    let mut buf = [0u8; 9];
    match read_full(r, &mut buf) {
        Ok(false) => return Ok(None),
        Ok(true) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(StreamError::Malformed("truncated request".into()))
        }
        Err(e) => return Err(e.into()),
    }
    let req = Request {
        opcode: buf[0],
        ack: u64::from_le_bytes(buf[1..].try_into().unwrap()),
    };
    if req.opcode != OP_FETCH {
        return Err(StreamError::Malformed(format!("unknown opcode {:#04x}", req.opcode)));
    }
    Ok(Some(req))
}
