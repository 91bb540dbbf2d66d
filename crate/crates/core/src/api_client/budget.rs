//! Global request pacing.
//!
//! One [`RequestLimiter`] is shared by every request kind. A [`Permit`] is held
//! for the whole duration of a wire request, so at most one request is in
//! flight, and the next permit is granted no earlier than `min_interval` after
//! the previous permit was released.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use thiserror::Error;

use crate::clock::{Clock, Shutdown};

pub const DEFAULT_MIN_INTERVAL: Duration = Duration::from_millis(1100);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestBudget {
    min_interval: Duration,
    burst: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("min_interval must be greater than zero")]
    ZeroInterval,
    #[error("burst must be at least 1")]
    ZeroBurst,
}

impl RequestBudget {
    pub fn new(min_interval: Duration, burst: usize) -> Result<Self, BudgetError> {
        if min_interval.is_zero() {
            return Err(BudgetError::ZeroInterval);
        }
        if burst == 0 {
            return Err(BudgetError::ZeroBurst);
        }
        Ok(Self {
            min_interval,
            burst,
        })
    }

    pub fn min_interval(&self) -> Duration {
        self.min_interval
    }

    /// Maximum number of callers allowed to queue for a permit at once.
    pub fn burst(&self) -> usize {
        self.burst
    }
}

impl Default for RequestBudget {
    fn default() -> Self {
        Self {
            min_interval: DEFAULT_MIN_INTERVAL,
            burst: 1,
        }
    }
}

/// Returned instead of a permit once shutdown has been requested.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("shutdown requested")]
pub struct ShutdownSignal;

#[derive(Debug, Default)]
struct Queue {
    waiting: usize,
}

pub struct RequestLimiter {
    budget: RequestBudget,
    clock: Arc<dyn Clock>,
    shutdown: Shutdown,
    queue: Mutex<Queue>,
    queue_cv: Condvar,
    // Monotonic time at which the previous permit was released.
    last_release: Mutex<Option<Duration>>,
    grants: Option<Mutex<Vec<Duration>>>,
}

impl RequestLimiter {
    pub fn new(budget: RequestBudget, clock: Arc<dyn Clock>, shutdown: Shutdown) -> Self {
        Self {
            budget,
            clock,
            shutdown,
            queue: Mutex::new(Queue::default()),
            queue_cv: Condvar::new(),
            last_release: Mutex::new(None),
            grants: None,
        }
    }

    /// Keeps every grant time (monotonic) for later inspection.
    pub fn with_recording(mut self) -> Self {
        self.grants = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn budget(&self) -> RequestBudget {
        self.budget
    }

    pub fn recorded_grants(&self) -> Vec<Duration> {
        self.grants
            .as_ref()
            .map(|g| g.lock().unwrap_or_else(|e| e.into_inner()).clone())
            .unwrap_or_default()
    }

    /// Blocks until the budget allows another request.
    pub fn acquire_request_slot(&self) -> Result<Permit<'_>, ShutdownSignal> {
        self.enter_queue()?;
        let result = self.wait_for_slot();
        self.leave_queue();
        result
    }

    fn enter_queue(&self) -> Result<(), ShutdownSignal> {
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        while q.waiting >= self.budget.burst {
            if self.shutdown.is_triggered() {
                return Err(ShutdownSignal);
            }
            q = self
                .queue_cv
                .wait_timeout(q, Duration::from_millis(50))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        q.waiting += 1;
        Ok(())
    }

    fn leave_queue(&self) {
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        q.waiting -= 1;
        self.queue_cv.notify_one();
    }

    fn wait_for_slot(&self) -> Result<Permit<'_>, ShutdownSignal> {
        let guard = self.last_release.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(released) = *guard {
            let earliest = released + self.budget.min_interval;
            loop {
                let now = self.clock.monotonic();
                if now >= earliest {
                    break;
                }
                if self.clock.sleep(earliest - now, &self.shutdown) {
                    return Err(ShutdownSignal);
                }
            }
        }
        if self.shutdown.is_triggered() {
            return Err(ShutdownSignal);
        }
        let granted_at = self.clock.monotonic();
        if let Some(grants) = &self.grants {
            grants
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .push(granted_at);
        }
        Ok(Permit {
            guard,
            clock: self.clock.as_ref(),
            granted_at,
        })
    }
}

/// Exclusive right to issue one request. Releasing it starts the next interval.
pub struct Permit<'a> {
    guard: MutexGuard<'a, Option<Duration>>,
    clock: &'a dyn Clock,
    granted_at: Duration,
}

impl Permit<'_> {
    pub fn granted_at(&self) -> Duration {
        self.granted_at
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.guard = Some(self.clock.monotonic());
    }
}
