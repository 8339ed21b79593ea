//! Sliding-window rate limiting over an injectable clock.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use tokio::sync::Mutex;

#[async_trait]
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    async fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

#[async_trait]
impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    async fn sleep(&self, duration: Duration) {
        tokio::time::sleep(duration).await;
    }
}

/// A clock that only moves when slept on. Sleeping advances it instantly.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
}

impl ManualClock {
    pub fn advance(&self, duration: Duration) {
        self.nanos.fetch_add(duration.as_nanos() as u64, Ordering::SeqCst);
    }
}

#[async_trait]
impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    async fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

pub const WINDOW: Duration = Duration::from_secs(60);

/// At most `per_window` acquisitions in any trailing window.
pub struct RateLimiter {
    per_window: usize,
    window: Duration,
    log: Mutex<VecDeque<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32, clock: Arc<dyn Clock>) -> Self {
        Self {
            per_window: requests.max(1) as usize,
            window: WINDOW,
            log: Mutex::new(VecDeque::new()),
            clock,
        }
    }

    /// Waits until a slot in the window is free, then takes it.
    pub async fn acquire(&self) {
        let mut log = self.log.lock().await;
        loop {
            let now = self.clock.now();
            while log.front().is_some_and(|&t| t + self.window <= now) {
                log.pop_front();
            }
            if log.len() < self.per_window {
                log.push_back(now);
                return;
            }
            let wait = log[0] + self.window - now;
            self.clock.sleep(wait).await;
        }
    }
}
