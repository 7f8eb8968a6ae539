//! Time source for training history and benchmark timing.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

/// Wall-clock time from a monotonic source.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Deterministic clock: every reading advances time by a fixed tick.
#[derive(Debug)]
pub struct StubClock {
    tick_nanos: u64,
    nanos: AtomicU64,
}

impl StubClock {
    pub fn new(tick: Duration) -> Self {
        StubClock { tick_nanos: tick.as_nanos() as u64, nanos: AtomicU64::new(0) }
    }
}

impl Clock for StubClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.fetch_add(self.tick_nanos, Ordering::SeqCst))
    }
}
