//! Simulated time.
//!
//! Every simulated device charges the cost of each operation to a per-thread
//! ledger. In [`ClockMode::Wall`] the calling thread additionally sleeps for
//! that long, so wall-clock measurements see the delay. A discrete-event
//! driver running in [`ClockMode::Virtual`] brackets each action with
//! [`measure`] and advances its own clock by the charged amount instead.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

thread_local! {
    static CHARGED_NS: Cell<u64> = const { Cell::new(0) };
}

/// Per-operation cost: one fixed delay plus a per-byte transfer cost.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LatencyModel {
    pub op_ns: u64,
    pub byte_ns: f64,
}

impl LatencyModel {
    pub const ZERO: LatencyModel = LatencyModel {
        op_ns: 0,
        byte_ns: 0.0,
    };

    pub fn new(op_us: u64, byte_ns: f64) -> Self {
        LatencyModel {
            op_ns: op_us * 1_000,
            byte_ns,
        }
    }

    pub fn cost_ns(&self, bytes: u64) -> u64 {
        self.op_ns + (bytes as f64 * self.byte_ns).round() as u64
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum ClockMode {
    /// Charge the ledger only.
    #[default]
    Virtual,
    /// Charge the ledger and sleep.
    Wall,
}

/// Charges `ns` to the calling thread's ledger, sleeping in wall mode.
pub fn charge(ns: u64, mode: ClockMode) {
    if ns == 0 {
        return;
    }
    CHARGED_NS.with(|c| c.set(c.get() + ns));
    if mode == ClockMode::Wall {
        std::thread::sleep(Duration::from_nanos(ns));
    }
}

/// Total simulated I/O time charged on this thread so far.
pub fn charged_ns() -> u64 {
    CHARGED_NS.with(|c| c.get())
}

/// Runs `f` and returns its result with the simulated time it charged.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = charged_ns();
    let out = f();
    (out, charged_ns() - before)
}

/// Source of timestamps for scheduling statistics.
pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
}

/// Monotonic wall clock measured from construction.
#[derive(Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            start: Instant::now(),
        }
    }

    pub fn starting_at(start: Instant) -> Self {
        WallClock { start }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }
}

/// Clock set explicitly by a simulation driver.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, ns: u64) {
        self.now.store(ns, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ns(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_is_fixed_plus_per_byte() {
        let m = LatencyModel::new(100, 2.0);
        assert_eq!(m.cost_ns(0), 100_000);
        assert_eq!(m.cost_ns(8192), 100_000 + 16_384);
    }

    #[test]
    fn measure_reports_only_inner_charges() {
        charge(5, ClockMode::Virtual);
        let ((), ns) = measure(|| {
            charge(40, ClockMode::Virtual);
            charge(2, ClockMode::Virtual);
        });
        assert_eq!(ns, 42);
    }
}
