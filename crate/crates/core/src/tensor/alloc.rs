//! Allocation accounting for tensor storage.
//!
//! Every [`Buffer`] registers its capacity with a process-wide tally and with
//! a tally owned by the allocating thread. The benchmark harness reads the
//! thread tally (benchmarks are single-threaded) so concurrently running work
//! on other threads does not leak into a measurement.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicI64, Ordering};

static GLOBAL_CURRENT: AtomicI64 = AtomicI64::new(0);
static GLOBAL_PEAK: AtomicI64 = AtomicI64::new(0);

thread_local! {
    static LOCAL_CURRENT: Cell<i64> = const { Cell::new(0) };
    static LOCAL_PEAK: Cell<i64> = const { Cell::new(0) };
}

/// Snapshot of an allocation tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocStats {
    pub current_bytes: i64,
    pub peak_bytes: i64,
}

/// Accessors for the allocation tallies.
pub struct AllocCounter;

impl AllocCounter {
    /// Tally of tensor bytes allocated by the calling thread.
    ///
    /// Buffers dropped on a different thread than the one that allocated them
    /// are credited to the dropping thread, so `current_bytes` may go
    /// negative on threads that only free.
    pub fn thread() -> AllocStats {
        AllocStats {
            current_bytes: LOCAL_CURRENT.with(Cell::get),
            peak_bytes: LOCAL_PEAK.with(Cell::get),
        }
    }

    pub fn global() -> AllocStats {
        AllocStats {
            current_bytes: GLOBAL_CURRENT.load(Ordering::SeqCst),
            peak_bytes: GLOBAL_PEAK.load(Ordering::SeqCst),
        }
    }

    fn record(delta: i64) {
        if delta == 0 {
            return;
        }
        let now = GLOBAL_CURRENT.fetch_add(delta, Ordering::SeqCst) + delta;
        if delta > 0 {
            GLOBAL_PEAK.fetch_max(now, Ordering::SeqCst);
        }
        LOCAL_CURRENT.with(|c| {
            let v = c.get() + delta;
            c.set(v);
            if delta > 0 {
                LOCAL_PEAK.with(|p| {
                    if v > p.get() {
                        p.set(v)
                    }
                });
            }
        });
    }
}

/// Measurement window over the calling thread's tally.
///
/// Opening a scope lowers the thread peak to the current value; closing it
/// restores the previous peak if that was higher, so scopes nest.
pub struct AllocScope {
    baseline: i64,
    saved_peak: i64,
}

impl AllocScope {
    pub fn begin() -> Self {
        let stats = AllocCounter::thread();
        LOCAL_PEAK.with(|p| p.set(stats.current_bytes));
        AllocScope {
            baseline: stats.current_bytes,
            saved_peak: stats.peak_bytes,
        }
    }

    /// Highest number of bytes above the scope-entry level seen so far.
    pub fn peak_delta(&self) -> i64 {
        AllocCounter::thread().peak_bytes - self.baseline
    }

    /// Bytes currently held above the scope-entry level.
    pub fn current_delta(&self) -> i64 {
        AllocCounter::thread().current_bytes - self.baseline
    }
}

impl Drop for AllocScope {
    fn drop(&mut self) {
        LOCAL_PEAK.with(|p| p.set(p.get().max(self.saved_peak)));
    }
}

/// Heap storage whose capacity is reported to [`AllocCounter`].
pub struct Buffer<T> {
    data: Vec<T>,
}

impl<T> Buffer<T> {
    fn bytes_of(v: &Vec<T>) -> i64 {
        (v.capacity() * std::mem::size_of::<T>()) as i64
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        AllocCounter::record(Self::bytes_of(&data));
        Buffer { data }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self::from_vec(Vec::with_capacity(cap))
    }

    pub fn extend_from_slice(&mut self, items: &[T])
    where
        T: Clone,
    {
        let before = Self::bytes_of(&self.data);
        self.data.extend_from_slice(items);
        AllocCounter::record(Self::bytes_of(&self.data) - before);
    }

    pub fn capacity_bytes(&self) -> usize {
        self.data.capacity() * std::mem::size_of::<T>()
    }

    pub fn into_vec(mut self) -> Vec<T> {
        AllocCounter::record(-Self::bytes_of(&self.data));
        std::mem::take(&mut self.data)
    }
}

impl<T: Clone> Clone for Buffer<T> {
    fn clone(&self) -> Self {
        Buffer::from_vec(self.data.clone())
    }
}

impl<T> Drop for Buffer<T> {
    fn drop(&mut self) {
        AllocCounter::record(-Self::bytes_of(&self.data));
    }
}

impl<T> Deref for Buffer<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> DerefMut for Buffer<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: PartialEq> PartialEq for Buffer<T> {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl<T> From<Vec<T>> for Buffer<T> {
    fn from(v: Vec<T>) -> Self {
        Buffer::from_vec(v)
    }
}

impl<'a, T> IntoIterator for &'a Buffer<T> {
    type Item = &'a T;
    type IntoIter = std::slice::Iter<'a, T>;
    fn into_iter(self) -> Self::IntoIter {
        self.data.iter()
    }
}

impl<T> FromIterator<T> for Buffer<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        Buffer::from_vec(iter.into_iter().collect())
    }
}

impl<T: std::fmt::Debug> std::fmt::Debug for Buffer<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.data.fmt(f)
    }
}
