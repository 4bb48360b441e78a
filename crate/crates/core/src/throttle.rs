//! Reservation clocks used to simulate shared capacity (bandwidth, IOPS, CPU).
//!
//! A [`RateClock`] hands out back-to-back time slots at a fixed rate. Callers
//! reserve an amount, get back the instant their slot completes and sleep until
//! then. Slots never overlap, so `n` units reserved from one clock can never
//! complete faster than `n / rate` regardless of how many threads share it.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Shared clock admitting `rate` units per second.
#[derive(Debug)]
pub struct RateClock {
    secs_per_unit: f64,
    next: Mutex<Option<Instant>>,
}

impl RateClock {
    pub fn new(rate: f64) -> RateClock {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive, got {rate}");
        RateClock {
            secs_per_unit: 1.0 / rate,
            next: Mutex::new(None),
        }
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.secs_per_unit
    }

    /// Book `amount` units; returns when the booked slot ends.
    pub fn reserve(&self, amount: f64) -> Instant {
        let now = Instant::now();
        let mut next = self.next.lock().unwrap();
        let start = match *next {
            Some(t) if t > now => t,
            _ => now,
        };
        let end = start + Duration::from_secs_f64(amount * self.secs_per_unit);
        *next = Some(end);
        end
    }

    /// Forget all bookings.
    pub fn reset(&self) {
        *self.next.lock().unwrap() = None;
    }
}

/// Single-owner clock, e.g. the per-stream ceiling of one open file.
#[derive(Debug, Clone)]
pub struct LocalClock {
    secs_per_unit: f64,
    next: Option<Instant>,
}

impl LocalClock {
    pub fn new(rate: f64) -> LocalClock {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive, got {rate}");
        LocalClock {
            secs_per_unit: 1.0 / rate,
            next: None,
        }
    }

    pub fn reserve(&mut self, amount: f64) -> Instant {
        let now = Instant::now();
        let start = match self.next {
            Some(t) if t > now => t,
            _ => now,
        };
        let end = start + Duration::from_secs_f64(amount * self.secs_per_unit);
        self.next = Some(end);
        end
    }
}

/// Sleep until `deadline`; returns immediately if it already passed.
pub fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}
