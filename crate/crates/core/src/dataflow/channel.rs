//! Bounded FIFO with blocking semantics and stall counters.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering::Relaxed};
use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError, TrySendError};

/// Counters shared by both ends of a channel.
#[derive(Debug)]
pub struct ChannelStats {
    pub name: String,
    pub capacity: usize,
    sent: AtomicU64,
    received: AtomicU64,
    write_stalls: AtomicU64,
    read_stalls: AtomicU64,
    peak_occupancy: AtomicUsize,
}

/// Point-in-time copy of [`ChannelStats`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelReport {
    pub name: String,
    pub capacity: usize,
    pub sent: u64,
    pub received: u64,
    pub write_stalls: u64,
    pub read_stalls: u64,
    pub peak_occupancy: usize,
}

impl ChannelStats {
    pub fn stalls(&self) -> u64 {
        self.write_stalls.load(Relaxed) + self.read_stalls.load(Relaxed)
    }

    pub fn report(&self) -> ChannelReport {
        ChannelReport {
            name: self.name.clone(),
            capacity: self.capacity,
            sent: self.sent.load(Relaxed),
            received: self.received.load(Relaxed),
            write_stalls: self.write_stalls.load(Relaxed),
            read_stalls: self.read_stalls.load(Relaxed),
            peak_occupancy: self.peak_occupancy.load(Relaxed),
        }
    }
}

pub struct FifoTx<T> {
    inner: Sender<T>,
    stats: Arc<ChannelStats>,
}

pub struct FifoRx<T> {
    inner: Receiver<T>,
    stats: Arc<ChannelStats>,
}

/// The peer end went away (the consuming or producing stage stopped).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Disconnected;

pub fn fifo<T>(name: &str, capacity: usize) -> (FifoTx<T>, FifoRx<T>, Arc<ChannelStats>) {
    assert!(capacity >= 1, "channel `{name}` needs capacity >= 1");
    let (tx, rx) = bounded(capacity);
    let stats = Arc::new(ChannelStats {
        name: name.to_string(),
        capacity,
        sent: AtomicU64::new(0),
        received: AtomicU64::new(0),
        write_stalls: AtomicU64::new(0),
        read_stalls: AtomicU64::new(0),
        peak_occupancy: AtomicUsize::new(0),
    });
    (
        FifoTx {
            inner: tx,
            stats: stats.clone(),
        },
        FifoRx {
            inner: rx,
            stats: stats.clone(),
        },
        stats,
    )
}

impl<T> FifoTx<T> {
    /// Blocking write; counts one write stall if the FIFO was full.
    pub fn send(&self, v: T) -> Result<(), Disconnected> {
        let r = match self.inner.try_send(v) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(v)) => {
                self.stats.write_stalls.fetch_add(1, Relaxed);
                self.inner.send(v).map_err(|_| Disconnected)
            }
            Err(TrySendError::Disconnected(_)) => Err(Disconnected),
        };
        if r.is_ok() {
            self.stats.sent.fetch_add(1, Relaxed);
            self.stats.peak_occupancy.fetch_max(self.inner.len(), Relaxed);
        }
        r
    }
}

impl<T> FifoRx<T> {
    /// Blocking read; counts one read stall if the FIFO was empty.
    pub fn recv(&self) -> Result<T, Disconnected> {
        let r = match self.inner.try_recv() {
            Ok(v) => Ok(v),
            Err(TryRecvError::Empty) => {
                self.stats.read_stalls.fetch_add(1, Relaxed);
                self.inner.recv().map_err(|_| Disconnected)
            }
            Err(TryRecvError::Disconnected) => Err(Disconnected),
        };
        if r.is_ok() {
            self.stats.received.fetch_add(1, Relaxed);
        }
        r
    }

    pub fn occupancy(&self) -> usize {
        self.inner.len()
    }
}
