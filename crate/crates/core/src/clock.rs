//! Time sources and the process-wide shutdown signal.
//!
//! Everything that reads the wall clock or sleeps goes through [`Clock`], so
//! tests can substitute a virtual clock and record exact grant times.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};

pub trait Clock: Send + Sync {
    /// Current UTC wall time; drives filenames and date partitions.
    fn utc_now(&self) -> DateTime<Utc>;

    /// Monotonic time since an arbitrary origin; drives request pacing.
    fn monotonic(&self) -> Duration;

    /// Sleeps for `dur` unless `shutdown` fires first.
    /// Returns `true` if the sleep was cut short by shutdown.
    fn sleep(&self, dur: Duration, shutdown: &Shutdown) -> bool;
}

/// Real wall clock and real sleeping.
#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn utc_now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, dur: Duration, shutdown: &Shutdown) -> bool {
        shutdown.wait_timeout(dur)
    }
}

/// Virtual UTC time in whole seconds, advanced explicitly by a test driver.
///
/// Pacing still uses the real monotonic clock, so rate-limit measurements
/// taken against a `VirtualClock` reflect real elapsed time.
#[derive(Debug, Clone)]
pub struct VirtualClock {
    epoch_secs: Arc<AtomicI64>,
    origin: Instant,
}

impl VirtualClock {
    pub fn new(start_epoch_secs: i64) -> Self {
        Self {
            epoch_secs: Arc::new(AtomicI64::new(start_epoch_secs)),
            origin: Instant::now(),
        }
    }

    pub fn now_secs(&self) -> i64 {
        self.epoch_secs.load(Ordering::SeqCst)
    }

    /// Moves the clock forward. Never moves it backwards.
    pub fn advance(&self, secs: i64) {
        assert!(secs >= 0, "virtual clock is monotone");
        self.epoch_secs.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn set(&self, epoch_secs: i64) {
        self.epoch_secs.fetch_max(epoch_secs, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn utc_now(&self) -> DateTime<Utc> {
        Utc.timestamp_opt(self.now_secs(), 0)
            .single()
            .expect("virtual time within chrono range")
    }

    fn monotonic(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, dur: Duration, shutdown: &Shutdown) -> bool {
        shutdown.wait_timeout(dur)
    }
}

/// Cloneable cancellation flag with a wakeable wait.
#[derive(Debug, Clone, Default)]
pub struct Shutdown {
    inner: Arc<(Mutex<bool>, Condvar)>,
}

impl Shutdown {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trigger(&self) {
        let (flag, cvar) = &*self.inner;
        *flag.lock().unwrap_or_else(|e| e.into_inner()) = true;
        cvar.notify_all();
    }

    pub fn is_triggered(&self) -> bool {
        *self.inner.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Blocks for up to `dur`. Returns `true` if shutdown was (or became) triggered.
    pub fn wait_timeout(&self, dur: Duration) -> bool {
        let (flag, cvar) = &*self.inner;
        let deadline = Instant::now() + dur;
        let mut triggered = flag.lock().unwrap_or_else(|e| e.into_inner());
        while !*triggered {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            let (guard, _) = cvar
                .wait_timeout(triggered, deadline - now)
                .unwrap_or_else(|e| e.into_inner());
            triggered = guard;
        }
        true
    }
}
