//! Injectable time sources.
//!
//! Everything that makes a time-dependent decision (tUUID timestamps, key
//! cache expiry, certificate validity, auction deadlines) reads time through
//! [`Clock`], so tests and deterministic simulations can run on a
//! [`VirtualClock`] while benchmarks use the [`SystemClock`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

const NANOS_PER_SEC: u64 = 1_000_000_000;

pub trait Clock: Send + Sync {
    /// Nanoseconds since the Unix epoch.
    fn now_ns(&self) -> u64;

    /// Block (or, for a virtual clock, advance time) for `duration`.
    fn sleep(&self, duration: Duration);

    /// True when `sleep` returns immediately by moving time forward.
    fn is_virtual(&self) -> bool {
        false
    }

    fn now_secs(&self) -> u64 {
        self.now_ns() / NANOS_PER_SEC
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ns(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Manually driven clock. Time only moves through [`VirtualClock::advance`],
/// [`VirtualClock::set`] or `sleep`.
#[derive(Debug)]
pub struct VirtualClock {
    now_ns: AtomicU64,
}

impl VirtualClock {
    /// 2023-11-14T22:13:20Z; a fixed, recognisable starting instant.
    pub const DEFAULT_START_NS: u64 = 1_700_000_000 * NANOS_PER_SEC;

    pub fn new(start_ns: u64) -> Self {
        Self {
            now_ns: AtomicU64::new(start_ns),
        }
    }

    pub fn advance(&self, duration: Duration) {
        self.now_ns
            .fetch_add(duration.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn set(&self, now_ns: u64) {
        self.now_ns.store(now_ns, Ordering::SeqCst);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new(Self::DEFAULT_START_NS)
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.now_ns.load(Ordering::SeqCst)
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}
