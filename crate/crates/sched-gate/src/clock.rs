//! Injectable time source.
//!
//! Cache freshness, credential expiry, and token refresh all make decisions
//! from `Clock::now` instead of reading the wall clock directly, so tests can
//! drive them with a simulated clock.

use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

/// Epoch seconds, fractional.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

/// Wall-clock time.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("system clock before epoch")
            .as_secs_f64()
    }
}

/// Manually advanced clock for tests. Cloned handles share the same time.
#[derive(Debug, Clone)]
pub struct SimClock {
    now: Arc<Mutex<f64>>,
}

impl SimClock {
    pub fn new(start: f64) -> Self {
        Self {
            now: Arc::new(Mutex::new(start)),
        }
    }

    pub fn advance(&self, seconds: f64) {
        *self.now.lock().unwrap() += seconds;
    }

    pub fn set(&self, t: f64) {
        *self.now.lock().unwrap() = t;
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        *self.now.lock().unwrap()
    }
}
