use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket shared by all workers of a gateway.
#[derive(Debug)]
pub struct RateLimiter {
    state: Mutex<Bucket>,
    capacity: f64,
    refill_per_sec: f64,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    /// Burst of one request; refills at `requests_per_minute / 60` tokens per second.
    pub fn per_minute(requests_per_minute: f64) -> Self {
        Self::new(requests_per_minute / 60.0, 1.0)
    }

    pub fn new(refill_per_sec: f64, capacity: f64) -> Self {
        let capacity = capacity.max(1.0);
        RateLimiter {
            state: Mutex::new(Bucket {
                tokens: capacity,
                last: Instant::now(),
            }),
            capacity,
            refill_per_sec: refill_per_sec.max(f64::MIN_POSITIVE),
        }
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut bucket = self.state.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let elapsed = now.duration_since(bucket.last).as_secs_f64();
                bucket.tokens = (bucket.tokens + elapsed * self.refill_per_sec).min(self.capacity);
                bucket.last = now;
                if bucket.tokens >= 1.0 {
                    bucket.tokens -= 1.0;
                    return;
                }
                (1.0 - bucket.tokens) / self.refill_per_sec
            };
            std::thread::sleep(Duration::from_secs_f64(wait.min(60.0)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paces_requests() {
        let limiter = RateLimiter::new(50.0, 1.0);
        let start = Instant::now();
        for _ in 0..6 {
            limiter.acquire();
        }
        // first token is free, five more at 20ms each
        assert!(start.elapsed() >= Duration::from_millis(90), "{:?}", start.elapsed());
    }

    #[test]
    fn burst_is_immediate() {
        let limiter = RateLimiter::new(0.001, 5.0);
        let start = Instant::now();
        for _ in 0..5 {
            limiter.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
