//! Unit conventions.
//!
//! Rates are `f64` bytes per second and sizes are `u64` bytes. A rate cap of
//! `None` means unlimited. Decimal prefixes are used for rates and file sizes
//! (1 MB = 10^6 bytes); binary prefixes only appear where a power of two is
//! required (slice and piece sizes).

pub const KB: f64 = 1e3;
pub const MB: f64 = 1e6;
pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;
pub const GIB: u64 = 1024 * 1024 * 1024;

/// Converts MB/s (decimal) to bytes/s.
pub fn mbps(rate: f64) -> f64 {
    rate * MB
}

/// `min` over optional caps, where `None` is unbounded.
pub fn min_cap(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}
