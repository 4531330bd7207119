use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket with reservation: a caller that finds the bucket empty takes
/// a token on credit and sleeps until it would have been refilled.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    /// `per_minute` requests on average, bursts up to `capacity`.
    pub fn new(per_minute: f64, capacity: f64) -> Self {
        let capacity = capacity.max(1.0);
        Self {
            capacity,
            per_second: per_minute.max(f64::MIN_POSITIVE) / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Time the caller has to wait before its request may go out.
    pub fn reserve(&self) -> Duration {
        let mut guard = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let (tokens, last) = &mut *guard;
        let now = Instant::now();
        *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second).min(self.capacity);
        *last = now;
        *tokens -= 1.0;
        if *tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-*tokens / self.per_second)
        }
    }

    pub fn acquire(&self) {
        let wait = self.reserve();
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}
