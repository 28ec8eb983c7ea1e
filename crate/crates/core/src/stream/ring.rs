//! Bounded ring of record words shared by one producer and many readers.
//!
//! Every record gets a global sequence number. Readers hold a position (the
//! next sequence they want); the ring keeps only the newest `capacity`
//! records. What happens when the producer would overwrite a record some
//! reader has not consumed yet is the overflow policy.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverflowPolicy {
    /// The producer waits for the slowest registered reader.
    Block,
    /// The producer overwrites; lapped readers skip ahead and the lost
    /// records are counted.
    DropOldest,
}

struct Inner {
    buf: Vec<u64>,
    /// Sequence number of the next record to be written.
    head: u64,
    readers: BTreeMap<u64, u64>,
    next_reader: u64,
    registered_total: u64,
    closed: bool,
    dropped: u64,
}

impl Inner {
    fn tail(&self) -> u64 {
        self.head.saturating_sub(self.buf.len() as u64)
    }

    fn slowest(&self) -> Option<u64> {
        self.readers.values().copied().min()
    }
}

pub struct SharedRing {
    inner: Mutex<Inner>,
    /// Signalled when records are published or the ring closes.
    data: Condvar,
    /// Signalled when readers advance or register.
    space: Condvar,
    policy: OverflowPolicy,
}

impl SharedRing {
    pub fn new(capacity: usize, policy: OverflowPolicy) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            inner: Mutex::new(Inner {
                buf: vec![0; capacity],
                head: 0,
                readers: BTreeMap::new(),
                next_reader: 0,
                registered_total: 0,
                closed: false,
                dropped: 0,
            }),
            data: Condvar::new(),
            space: Condvar::new(),
            policy,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.lock().buf.len()
    }

    pub fn policy(&self) -> OverflowPolicy {
        self.policy
    }

    pub fn head(&self) -> u64 {
        self.lock().head
    }

    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Registers a reader starting at the oldest retained record.
    pub fn register(&self) -> u64 {
        let mut g = self.lock();
        let id = g.next_reader;
        g.next_reader += 1;
        g.registered_total += 1;
        let tail = g.tail();
        g.readers.insert(id, tail);
        self.space.notify_all();
        id
    }

    pub fn unregister(&self, id: u64) {
        self.lock().readers.remove(&id);
        self.space.notify_all();
    }

    /// Moves a reader's position forward (never backward).
    pub fn advance(&self, id: u64, pos: u64) {
        let mut g = self.lock();
        if let Some(p) = g.readers.get_mut(&id) {
            if pos > *p {
                *p = pos;
                self.space.notify_all();
            }
        }
    }

    /// Blocks until `n` readers have registered over the ring's lifetime.
    pub fn wait_for_readers(&self, n: u64) {
        let mut g = self.lock();
        while g.registered_total < n {
            g = self.space.wait(g).unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Appends records, waiting for space under [`OverflowPolicy::Block`].
    pub fn publish(&self, mut records: &[u64]) {
        while !records.is_empty() {
            let mut g = self.lock();
            let cap = g.buf.len() as u64;
            let room = match self.policy {
                OverflowPolicy::Block => loop {
                    let room = match g.slowest() {
                        Some(min) => cap - (g.head - min).min(cap),
                        None => cap,
                    };
                    if room > 0 {
                        break room;
                    }
                    g = self.space.wait(g).unwrap_or_else(|e| e.into_inner());
                },
                OverflowPolicy::DropOldest => cap,
            };
            let n = (records.len() as u64).min(room) as usize;
            let start = (g.head % cap) as usize;
            let first = n.min(g.buf.len() - start);
            g.buf[start..start + first].copy_from_slice(&records[..first]);
            g.buf[..n - first].copy_from_slice(&records[first..n]);
            g.head += n as u64;
            if self.policy == OverflowPolicy::DropOldest {
                let tail = g.tail();
                let mut lost = 0;
                for p in g.readers.values_mut() {
                    if *p < tail {
                        lost += tail - *p;
                        *p = tail;
                    }
                }
                if lost > 0 {
                    g.dropped += lost;
                    log::warn!("ring overflow: {lost} records dropped for lagging readers");
                }
            }
            drop(g);
            self.data.notify_all();
            records = &records[n..];
        }
    }

    /// Marks the end of the stream and wakes everyone.
    pub fn close(&self) {
        self.lock().closed = true;
        self.data.notify_all();
        self.space.notify_all();
    }

    /// Copies up to `max` records starting at `pos` into `out`.
    ///
    /// Waits up to `timeout` for data when none is available yet. Returns the
    /// sequence number of the first copied record, which is later than `pos`
    /// when those records were already overwritten, or `None` once the ring
    /// is closed and drained past `pos`. An empty `out` with `Some` means
    /// the wait timed out.
    pub fn read_from(&self, pos: u64, max: usize, timeout: Option<Duration>, out: &mut Vec<u64>) -> Option<u64> {
        out.clear();
        let mut g = self.lock();
        if g.head <= pos && !g.closed {
            g = match timeout {
                Some(t) => {
                    self.data
                        .wait_timeout_while(g, t, |g| g.head <= pos && !g.closed)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
                None => self
                    .data
                    .wait_while(g, |g| g.head <= pos && !g.closed)
                    .unwrap_or_else(|e| e.into_inner()),
            };
        }
        if g.head <= pos {
            return if g.closed { None } else { Some(pos) };
        }
        let from = pos.max(g.tail());
        let cap = g.buf.len() as u64;
        let n = ((g.head - from) as usize).min(max);
        let start = (from % cap) as usize;
        let first = n.min(g.buf.len() - start);
        out.extend_from_slice(&g.buf[start..start + first]);
        out.extend_from_slice(&g.buf[..n - first]);
        Some(from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn wraps_and_preserves_order() {
        let ring = SharedRing::new(4, OverflowPolicy::DropOldest);
        ring.publish(&[1, 2, 3]);
        let mut out = Vec::new();
        assert_eq!(ring.read_from(0, 10, None, &mut out), Some(0));
        assert_eq!(out, vec![1, 2, 3]);
        ring.publish(&[4, 5, 6]);
        assert_eq!(ring.read_from(0, 10, None, &mut out), Some(2));
        assert_eq!(out, vec![3, 4, 5, 6]);
        ring.close();
        assert_eq!(ring.read_from(6, 10, None, &mut out), None);
    }

    #[test]
    fn drop_oldest_counts_lapped_records() {
        let ring = SharedRing::new(4, OverflowPolicy::DropOldest);
        let id = ring.register();
        ring.publish(&[0; 10]);
        assert_eq!(ring.dropped(), 6);
        ring.advance(id, 10);
        ring.publish(&[0; 2]);
        assert_eq!(ring.dropped(), 6);
    }

    #[test]
    fn block_waits_for_slow_reader() {
        let ring = Arc::new(SharedRing::new(8, OverflowPolicy::Block));
        let id = ring.register();
        let producer = {
            let ring = ring.clone();
            std::thread::spawn(move || {
                let data: Vec<u64> = (0..1000).collect();
                ring.publish(&data);
                ring.close();
            })
        };
        let mut got = Vec::new();
        let mut pos = 0;
        let mut out = Vec::new();
        while let Some(from) = ring.read_from(pos, 3, None, &mut out) {
            assert_eq!(from, pos);
            got.extend_from_slice(&out);
            pos += out.len() as u64;
            ring.advance(id, pos);
        }
        producer.join().unwrap();
        assert_eq!(got, (0..1000).collect::<Vec<_>>());
        assert_eq!(ring.dropped(), 0);
    }

    #[test]
    fn read_times_out_without_data() {
        let ring = SharedRing::new(4, OverflowPolicy::Block);
        let mut out = Vec::new();
        assert_eq!(ring.read_from(0, 4, Some(Duration::from_millis(1)), &mut out), Some(0));
        assert!(out.is_empty());
    }
}
