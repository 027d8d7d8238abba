//! Bounded in-flight request limiter shared by the HTTP providers.

use std::sync::{Condvar, Mutex};

#[derive(Debug)]
pub struct Limiter {
    capacity: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    pub const DEFAULT_CAPACITY: usize = 8;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "limiter capacity must be positive");
        Self {
            capacity,
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock().expect("limiter lock")
    }

    /// Blocks until a slot is free.
    pub fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_use.lock().expect("limiter lock");
        while *n >= self.capacity {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        LimiterGuard { limiter: self }
    }
}

impl Default for Limiter {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }
}

pub struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_use.lock().expect("limiter lock");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}
