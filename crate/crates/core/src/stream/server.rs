//! TCP record service and matching capture clients.
//!
//! A producer thread drains the record source into a [`SharedRing`],
//! optionally paced by a token bucket that releases one block of records at
//! a time (the software analogue of a half-buffer interrupt). Each accepted
//! connection gets its own thread and ring position.
//!
//! In continuous mode the server pushes data frames as records become
//! available and closes the connection after the last one. In request mode
//! it answers each fetch with everything retained from the client's
//! acknowledged position onward, and closes once the stream has ended and
//! the client is fully caught up.

use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ring::{OverflowPolicy, SharedRing};
use super::wire::{read_frame, read_request, write_error, write_frame, write_request, Frame, Request, OP_FETCH};
use super::StreamError;
use crate::delayline::COARSE_MASK;

pub type RecordSource = Box<dyn Iterator<Item = u64> + Send>;

/// Records whose coarse field is their sequence number, so a client can
/// check order and completeness.
pub fn sequence_source(n: u64) -> impl Iterator<Item = u64> + Send {
    (0..n).map(|i| (i & COARSE_MASK) << 16 | (i & 0xFF) << 8 | 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServeMode {
    Continuous,
    /// `period_ms` is the poll period the bundled client uses.
    Request {
        period_ms: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub endpoint: String,
    pub mode: ServeMode,
    pub buffer_records: usize,
    /// Records per second; unpaced when absent.
    pub rate: Option<f64>,
    /// Records released per pacing step.
    pub block_records: usize,
    /// Largest data frame pushed in continuous mode.
    pub max_frame: usize,
    /// The producer starts once this many clients have connected.
    pub wait_for_clients: u64,
    /// Defaults to blocking when unpaced and dropping oldest when paced.
    pub policy: Option<PolicyName>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    Block,
    DropOldest,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            endpoint: "127.0.0.1:0".into(),
            mode: ServeMode::Continuous,
            buffer_records: 1 << 16,
            rate: None,
            block_records: 1 << 12,
            max_frame: 1 << 15,
            wait_for_clients: 1,
            policy: None,
        }
    }
}

impl ServerConfig {
    pub fn overflow_policy(&self) -> OverflowPolicy {
        match (self.policy, self.rate) {
            (Some(PolicyName::Block), _) | (None, None) => OverflowPolicy::Block,
            _ => OverflowPolicy::DropOldest,
        }
    }

    fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: &str| Err(StreamError::InvalidModel(m.into()));
        if self.buffer_records == 0 || self.block_records == 0 || self.max_frame == 0 {
            return bad("buffer, block and frame sizes must be positive");
        }
        if self.max_frame >= super::wire::ERROR_COUNT as usize {
            return bad("frame size exceeds the wire limit");
        }
        if let Some(r) = self.rate {
            if !(r.is_finite() && r > 0.0) {
                return bad("rate must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub published: u64,
    pub dropped: u64,
    pub clients: u64,
    pub malformed_requests: u64,
}

#[derive(Default)]
struct Counters {
    clients: AtomicU64,
    active: AtomicU64,
    malformed: AtomicU64,
}

pub struct ServerHandle {
    addr: SocketAddr,
    ring: Arc<SharedRing>,
    counters: Arc<Counters>,
    stop: Arc<AtomicBool>,
    producer: Option<JoinHandle<()>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            published: self.ring.head(),
            dropped: self.ring.dropped(),
            clients: self.counters.clients.load(Ordering::Relaxed),
            malformed_requests: self.counters.malformed.load(Ordering::Relaxed),
        }
    }

    /// Client connections still being served.
    pub fn active_clients(&self) -> u64 {
        self.counters.active.load(Ordering::SeqCst)
    }

    /// Blocks until the source is exhausted.
    pub fn wait_source(&mut self) {
        if let Some(p) = self.producer.take() {
            let _ = p.join();
        }
    }

    /// Stops accepting connections. Running client threads finish their
    /// current stream.
    pub fn shutdown(mut self) -> ServerStats {
        self.stop_acceptor();
        self.stats()
    }

    fn stop_acceptor(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = a.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_acceptor();
    }
}

/// Binds `config.endpoint` and starts serving `source`.
pub fn serve(config: &ServerConfig, source: RecordSource) -> Result<ServerHandle, StreamError> {
    config.validate()?;
    let addr = config
        .endpoint
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| StreamError::InvalidModel(format!("cannot resolve {}", config.endpoint)))?;
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let ring = Arc::new(SharedRing::new(config.buffer_records, config.overflow_policy()));
    let counters = Arc::new(Counters::default());
    let stop = Arc::new(AtomicBool::new(false));
    log::info!("serving on {addr} ({:?}, {:?})", config.mode, ring.policy());

    let producer = {
        let ring = ring.clone();
        let cfg = config.clone();
        std::thread::spawn(move || produce(&ring, &cfg, source))
    };
    let acceptor = {
        let ring = ring.clone();
        let counters = counters.clone();
        let stop = stop.clone();
        let cfg = config.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                counters.clients.fetch_add(1, Ordering::Relaxed);
                counters.active.fetch_add(1, Ordering::SeqCst);
                let ring = ring.clone();
                let counters = counters.clone();
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let peer = stream.peer_addr().ok();
                    let result = match cfg.mode {
                        ServeMode::Continuous => push_client(stream, &ring, cfg.max_frame),
                        ServeMode::Request { .. } => answer_client(stream, &ring, &counters),
                    };
                    if let Err(e) = result {
                        log::warn!("client {peer:?} disconnected: {e}");
                    }
                    counters.active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        })
    };
    Ok(ServerHandle {
        addr,
        ring,
        counters,
        stop,
        producer: Some(producer),
        acceptor: Some(acceptor),
    })
}

fn produce(ring: &SharedRing, cfg: &ServerConfig, mut source: RecordSource) {
    ring.wait_for_readers(cfg.wait_for_clients);
    let start = Instant::now();
    let block = cfg.block_records.min(cfg.buffer_records);
    let mut chunk = Vec::with_capacity(block);
    let mut released = 0u64;
    loop {
        chunk.clear();
        chunk.extend(source.by_ref().take(block));
        if chunk.is_empty() {
            break;
        }
        if let Some(rate) = cfg.rate {
            let due = start + Duration::from_secs_f64((released + chunk.len() as u64) as f64 / rate);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        ring.publish(&chunk);
        released += chunk.len() as u64;
    }
    ring.close();
    log::info!("source exhausted after {released} records, {} dropped", ring.dropped());
}

/// Unregisters the reader however the client thread exits.
struct Registration<'a> {
    ring: &'a SharedRing,
    id: u64,
}

impl Drop for Registration<'_> {
    fn drop(&mut self) {
        self.ring.unregister(self.id);
    }
}

fn push_client(mut stream: TcpStream, ring: &SharedRing, max_frame: usize) -> Result<(), StreamError> {
    let reg = Registration {
        ring,
        id: ring.register(),
    };
    stream.set_nodelay(true)?;
    let mut pos = 0u64;
    let mut out = Vec::with_capacity(max_frame);
    let mut scratch = Vec::new();
    while let Some(from) = ring.read_from(pos, max_frame, Some(Duration::from_millis(100)), &mut out) {
        if out.is_empty() {
            continue;
        }
        write_frame(&mut stream, &out, &mut scratch)?;
        pos = from + out.len() as u64;
        ring.advance(reg.id, pos);
    }
    stream.flush()?;
    stream.shutdown(Shutdown::Write)?;
    Ok(())
}

fn answer_client(mut stream: TcpStream, ring: &SharedRing, counters: &Counters) -> Result<(), StreamError> {
    let reg = Registration {
        ring,
        id: ring.register(),
    };
    stream.set_nodelay(true)?;
    let cap = ring.capacity();
    let mut out = Vec::with_capacity(cap);
    let mut scratch = Vec::new();
    loop {
        let req = match read_request(&mut stream) {
            Ok(Some(r)) => r,
            Ok(None) => return Ok(()),
            Err(StreamError::Malformed(m)) => {
                counters.malformed.fetch_add(1, Ordering::Relaxed);
                log::warn!("rejecting request: {m}");
                write_error(&mut stream)?;
                stream.shutdown(Shutdown::Both)?;
                return Err(StreamError::Malformed(m));
            }
            Err(e) => return Err(e),
        };
        if req.ack > ring.head() {
            counters.malformed.fetch_add(1, Ordering::Relaxed);
            write_error(&mut stream)?;
            stream.shutdown(Shutdown::Both)?;
            return Err(StreamError::Malformed(format!("acknowledged {} beyond head", req.ack)));
        }
        ring.advance(reg.id, req.ack);
        match ring.read_from(req.ack, cap, Some(Duration::ZERO), &mut out) {
            Some(from) => {
                if from > req.ack {
                    log::warn!("client lagged: records {}..{from} were overwritten", req.ack);
                }
                write_frame(&mut stream, &out, &mut scratch)?;
                stream.flush()?;
            }
            None => {
                stream.shutdown(Shutdown::Both)?;
                return Ok(());
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureStats {
    pub records: u64,
    pub frames: u64,
    pub seconds: f64,
}

impl CaptureStats {
    pub fn rate(&self) -> f64 {
        self.records as f64 / self.seconds
    }
}

/// Reads a continuous-mode stream to its end, handing each frame's records
/// to `sink`.
pub fn capture_continuous<A, F>(addr: A, mut sink: F) -> Result<CaptureStats, StreamError>
where
    A: ToSocketAddrs,
    F: FnMut(&[u64]) -> Result<(), StreamError>,
{
    let mut stream = TcpStream::connect(addr)?;
    let start = Instant::now();
    let mut stats = CaptureStats::default();
    let mut buf = Vec::new();
    let mut scratch = Vec::new();
    loop {
        buf.clear();
        match read_frame(&mut stream, &mut buf, &mut scratch)? {
            Frame::Records => {
                stats.records += buf.len() as u64;
                stats.frames += 1;
                sink(&buf)?;
            }
            Frame::Error => return Err(StreamError::Rejected),
            Frame::End => break,
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    Ok(stats)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestStats {
    pub records: u64,
    /// Records carried by each response, in order.
    pub responses: Vec<u64>,
    pub seconds: f64,
}

/// Polls a request-mode server every `period` until it closes the stream.
pub fn capture_requests<A, F>(addr: A, period: Duration, mut sink: F) -> Result<RequestStats, StreamError>
where
    A: ToSocketAddrs,
    F: FnMut(&[u64]) -> Result<(), StreamError>,
{
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let start = Instant::now();
    let mut stats = RequestStats::default();
    let mut buf = Vec::new();
    let mut scratch = Vec::new();
    let mut ack = 0u64;
    let mut tick = start;
    loop {
        tick += period;
        let now = Instant::now();
        if tick > now {
            std::thread::sleep(tick - now);
        }
        if write_request(&mut stream, Request { opcode: OP_FETCH, ack }).is_err() {
            break;
        }
        buf.clear();
        match read_frame(&mut stream, &mut buf, &mut scratch)? {
            Frame::Records => {
                ack += buf.len() as u64;
                stats.records += buf.len() as u64;
                stats.responses.push(buf.len() as u64);
                sink(&buf)?;
            }
            Frame::Error => return Err(StreamError::Rejected),
            Frame::End => break,
        }
    }
    stats.seconds = start.elapsed().as_secs_f64();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::decode_record;

    #[test]
    fn continuous_loopback_is_lossless() {
        let mut h = serve(&ServerConfig::default(), Box::new(sequence_source(1000))).unwrap();
        let mut got = Vec::new();
        let stats = capture_continuous(h.local_addr(), |r| {
            got.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        h.wait_source();
        assert_eq!(stats.records, 1000);
        assert_eq!(got, sequence_source(1000).collect::<Vec<_>>());
        let (tag, flags) = decode_record(got[999]).unwrap();
        assert_eq!((tag.coarse, tag.fine, flags), (999, 999 & 0xFF, 1));
        assert_eq!(h.shutdown().dropped, 0);
    }

    #[test]
    fn request_mode_serves_everything() {
        let cfg = ServerConfig {
            mode: ServeMode::Request { period_ms: 5 },
            ..Default::default()
        };
        let h = serve(&cfg, Box::new(sequence_source(5000))).unwrap();
        let mut got = Vec::new();
        let stats = capture_requests(h.local_addr(), Duration::from_millis(5), |r| {
            got.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        assert_eq!(stats.records, 5000);
        assert_eq!(got, sequence_source(5000).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_request_gets_error_reply() {
        let cfg = ServerConfig {
            mode: ServeMode::Request { period_ms: 5 },
            wait_for_clients: 0,
            ..Default::default()
        };
        let h = serve(&cfg, Box::new(sequence_source(10))).unwrap();
        let mut s = TcpStream::connect(h.local_addr()).unwrap();
        s.write_all(&[0x7F; 9]).unwrap();
        let mut out = Vec::new();
        assert_eq!(read_frame(&mut s, &mut out, &mut Vec::new()).unwrap(), Frame::Error);
        assert_eq!(read_frame(&mut s, &mut out, &mut Vec::new()).unwrap(), Frame::End);
        drop(s);
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(h.stats().malformed_requests, 1);
    }
}
