//! CPU cost accounting for step compute.
//!
//! Step costs are expressed in nanoseconds of CPU time per input byte. The
//! [`CpuModel::Host`] model burns them on the real processor with a calibrated
//! checksum loop. [`CpuModel::Virtual`] charges them against reservation clocks
//! instead, modelling a machine with `cores` processors: each worker runs at
//! most one CPU-second per second, all workers together at most `cores`, and
//! exclusive work at most one CPU-second per second machine-wide. The virtual
//! model lets parallel-scaling behaviour reproduce on hosts with fewer cores
//! than the modelled machine.

use std::hint::black_box;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::ExecMode;
use crate::throttle::{LocalClock, RateClock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CpuModel {
    #[default]
    Host,
    Virtual { cores: u32 },
}

/// Deterministic busy loop; returns a checksum so it cannot be elided.
pub fn checksum_loop(iterations: u64, seed: u64) -> u64 {
    let mut x = seed | 1;
    for i in 0..iterations {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x = x.wrapping_add(i);
    }
    black_box(x)
}

/// Nanoseconds per [`checksum_loop`] iteration on this host, measured once.
pub fn calibration() -> f64 {
    static NS_PER_ITER: OnceLock<f64> = OnceLock::new();
    *NS_PER_ITER.get_or_init(|| {
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let n = 2_000_000;
            let t = Instant::now();
            checksum_loop(n, 0x5eed);
            best = best.min(t.elapsed().as_nanos() as f64 / n as f64);
        }
        best.max(1e-3)
    })
}

/// Burns roughly `ns` nanoseconds of CPU on the calling thread.
pub fn burn(ns: f64) {
    if ns > 0.0 {
        checksum_loop((ns / calibration()).round() as u64, ns.to_bits());
    }
}

/// Sleep only when the deadline is far enough ahead to be worth a syscall.
/// Reservations are absolute, so a skipped sleep is paid back by the next one.
fn pace(deadline: Instant) {
    let now = Instant::now();
    if deadline > now + Duration::from_micros(100) {
        std::thread::sleep(deadline - now);
    }
}

/// Shared CPU accounting for one engine run.
#[derive(Debug)]
pub struct Cpu {
    model: CpuModel,
    shared: Option<RateClock>,
    exclusive_clock: RateClock,
    dispatch_clock: RateClock,
    exclusive: Mutex<()>,
    dispatch: Mutex<()>,
}

/// Per-worker state; under the virtual model a worker is one processor.
#[derive(Debug, Clone)]
pub struct WorkerCpu {
    local: LocalClock,
}

const NS: f64 = 1e9;

impl Cpu {
    pub fn new(model: CpuModel) -> Cpu {
        let shared = match model {
            CpuModel::Host => None,
            CpuModel::Virtual { cores } => Some(RateClock::new(cores.max(1) as f64 * NS)),
        };
        if model == CpuModel::Host {
            calibration();
        }
        Cpu {
            model,
            shared,
            exclusive_clock: RateClock::new(NS),
            dispatch_clock: RateClock::new(NS),
            exclusive: Mutex::new(()),
            dispatch: Mutex::new(()),
        }
    }

    pub fn model(&self) -> CpuModel {
        self.model
    }

    pub fn worker(&self) -> WorkerCpu {
        WorkerCpu {
            local: LocalClock::new(NS),
        }
    }

    /// Runs `work` and charges `ns` of compute under `mode`.
    pub fn run<R>(&self, w: &mut WorkerCpu, ns: f64, mode: ExecMode, work: impl FnOnce() -> R) -> R {
        match (self.model, mode) {
            (CpuModel::Host, ExecMode::Parallel) => {
                let r = work();
                burn(ns);
                r
            }
            (CpuModel::Host, ExecMode::Exclusive) => {
                let _g = self.exclusive.lock().unwrap_or_else(|e| e.into_inner());
                let r = work();
                burn(ns);
                r
            }
            (CpuModel::Virtual { .. }, _) => {
                let r = work();
                if ns > 0.0 {
                    let mut deadline = w.local.reserve(ns);
                    if let Some(shared) = &self.shared {
                        deadline = deadline.max(shared.reserve(ns));
                    }
                    if mode == ExecMode::Exclusive {
                        deadline = deadline.max(self.exclusive_clock.reserve(ns));
                    }
                    pace(deadline);
                }
                r
            }
        }
    }

    /// Charges per-sample scheduling overhead, which is serial across workers.
    pub fn dispatch(&self, w: &mut WorkerCpu, ns: f64) {
        if ns <= 0.0 {
            return;
        }
        match self.model {
            CpuModel::Host => {
                let _g = self.dispatch.lock().unwrap_or_else(|e| e.into_inner());
                burn(ns);
            }
            CpuModel::Virtual { .. } => {
                let deadline = w.local.reserve(ns).max(self.dispatch_clock.reserve(ns));
                pace(deadline);
            }
        }
    }
}
