/// Length of the trailing window used for rate measurement.
pub const RATE_WINDOW_SECS: usize = 20;

/// Trailing-window byte rate with one-second buckets.
#[derive(Debug, Clone)]
pub struct RateMeter {
    buckets: [f64; RATE_WINDOW_SECS],
    labels: [i64; RATE_WINDOW_SECS],
    start: f64,
}

impl RateMeter {
    pub fn new(start: f64) -> Self {
        RateMeter {
            buckets: [0.0; RATE_WINDOW_SECS],
            labels: [i64::MIN; RATE_WINDOW_SECS],
            start,
        }
    }

    pub fn add(&mut self, now: f64, bytes: f64) {
        let sec = now.floor() as i64;
        let slot = sec.rem_euclid(RATE_WINDOW_SECS as i64) as usize;
        if self.labels[slot] != sec {
            self.labels[slot] = sec;
            self.buckets[slot] = 0.0;
        }
        self.buckets[slot] += bytes;
    }

    /// Average rate over the trailing window (or since creation, if younger).
    /// The divisor never drops below one second.
    pub fn rate(&self, now: f64) -> f64 {
        let sec = now.floor() as i64;
        let lo = sec - RATE_WINDOW_SECS as i64;
        let total: f64 = self
            .labels
            .iter()
            .zip(&self.buckets)
            .filter(|(l, _)| **l > lo && **l <= sec)
            .map(|(_, b)| b)
            .sum();
        let span = (now - self.start).clamp(1.0, RATE_WINDOW_SECS as f64);
        total / span
    }
}
