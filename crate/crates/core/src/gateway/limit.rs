use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::Rng;

use crate::error::{Error, Result};

/// Counting semaphore bounding in-flight provider requests.
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        InFlightLimit {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("limiter poisoned")
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.current.lock().expect("limiter poisoned");
        *n -= 1;
        self.limit.freed.notify_one();
    }
}

/// Exponential backoff with jitter. `attempts` counts the first call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (0-based): base * 2^retry, scaled by a factor in [0.5, 1].
    pub fn delay(&self, retry: u32) -> Duration {
        if self.base_delay.is_zero() {
            return Duration::ZERO;
        }
        let full = self.base_delay.saturating_mul(1u32 << retry.min(16));
        let jitter: f64 = rand::thread_rng().gen_range(0.5..=1.0);
        full.mul_f64(jitter)
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut retry = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && retry + 1 < attempts => {
                    log::warn!("provider call failed ({e}); retrying");
                    thread::sleep(self.delay(retry));
                    retry += 1;
                }
                Err(Error::Provider {
                    status: Some(429), ..
                }) => return Err(Error::RateLimited { attempts }),
                Err(e) => return Err(e),
            }
        }
    }
}
