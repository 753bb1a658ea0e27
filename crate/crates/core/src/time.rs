//! Fixed-point time stamps.
//!
//! Raw epochs of a pass are tens to thousands of seconds while the quantities
//! of interest are picoseconds or below, so time stamps are held as integer
//! attoseconds and differenced exactly before conversion to `f64`.
//! Detector tags produced by the simulator are always whole picoseconds, which
//! is what the event-log formats carry.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

const AS_PER_S: f64 = 1e18;
const AS_PER_S_INT: i128 = 1_000_000_000_000_000_000;
const AS_PER_FS: i128 = 1_000;
const AS_PER_PS: i128 = 1_000_000;

/// A point on some clock's time axis, in integer attoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(i128);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_as(a: i128) -> Self {
        Timestamp(a)
    }

    pub const fn from_fs(fs: i64) -> Self {
        Timestamp(fs as i128 * AS_PER_FS)
    }

    pub const fn from_ps(ps: i64) -> Self {
        Timestamp(ps as i128 * AS_PER_PS)
    }

    /// Rounds to the nearest attosecond.
    pub fn from_secs(secs: f64) -> Self {
        Timestamp(secs_to_as(secs))
    }

    /// Rounds to the nearest whole picosecond, the resolution of a
    /// time-to-digital converter.
    pub fn from_secs_ps(secs: f64) -> Self {
        Timestamp::from_ps((secs * 1e12).round() as i64)
    }

    pub const fn as_as(self) -> i128 {
        self.0
    }

    /// Picoseconds, truncated toward negative infinity.
    pub fn as_ps(self) -> i64 {
        self.0.div_euclid(AS_PER_PS) as i64
    }

    /// True when this stamp sits on a whole picosecond.
    pub fn is_whole_ps(self) -> bool {
        self.0.rem_euclid(AS_PER_PS) == 0
    }

    pub fn as_secs(self) -> f64 {
        // Split to keep full precision for large epochs.
        let whole = self.0.div_euclid(AS_PER_S_INT);
        let frac = self.0.rem_euclid(AS_PER_S_INT);
        whole as f64 + frac as f64 / AS_PER_S
    }

    /// `self − earlier` in seconds, computed exactly before rounding to `f64`.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / AS_PER_S
    }

    /// Shifts by a duration in seconds (rounded to attoseconds).
    pub fn shifted(self, secs: f64) -> Timestamp {
        Timestamp(self.0 + secs_to_as(secs))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 + rhs.0)
    }
}

impl Sub<Duration> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0 - rhs.0)
    }
}

impl Sub for Timestamp {
    type Output = Duration;
    fn sub(self, rhs: Timestamp) -> Duration {
        Duration(self.0 - rhs.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.12} s", self.as_secs())
    }
}

fn secs_to_as(secs: f64) -> i128 {
    // Whole seconds separately: 1e18·secs overflows f64's exact range.
    let whole = secs.floor();
    whole as i128 * AS_PER_S_INT + ((secs - whole) * AS_PER_S).round() as i128
}

/// Signed span between two time stamps, in integer attoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(i128);

impl Duration {
    pub const fn from_as(a: i128) -> Self {
        Duration(a)
    }

    pub const fn from_fs(fs: i64) -> Self {
        Duration(fs as i128 * AS_PER_FS)
    }

    pub const fn from_ps(ps: i64) -> Self {
        Duration(ps as i128 * AS_PER_PS)
    }

    pub fn from_secs(secs: f64) -> Self {
        Duration(secs_to_as(secs))
    }

    pub const fn as_as(self) -> i128 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / AS_PER_S
    }

    pub fn abs(self) -> Duration {
        Duration(self.0.abs())
    }
}

impl std::ops::Mul<u64> for Duration {
    type Output = Duration;
    fn mul(self, k: u64) -> Duration {
        Duration(self.0 * k as i128)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picosecond_roundtrip() {
        let t = Timestamp::from_ps(-1_234_567);
        assert_eq!(t.as_ps(), -1_234_567);
        assert!(t.is_whole_ps());
        assert!(!Timestamp::from_fs(1_500).is_whole_ps());
    }

    #[test]
    fn exact_difference_at_large_epoch() {
        let a = Timestamp::from_secs(1000.0);
        let b = a + Duration::from_fs(7);
        assert_eq!(b.secs_since(a), 7e-15);
        assert_eq!((b - a).as_as(), 7_000);
        let c = a + Duration::from_as(3);
        assert_eq!(c.secs_since(a), 3e-18);
    }

    #[test]
    fn as_secs_keeps_precision() {
        let t = Timestamp::from_fs(5_000_000_000_000_000_123);
        assert!((t.as_secs() - 5000.000_000_000_000_123).abs() < 1e-12);
        assert_eq!(Timestamp::from_secs(1000.25).as_as(), 1_000_250_000_000_000_000_000);
        assert_eq!(Timestamp::from_secs(-0.5).as_as(), -500_000_000_000_000_000);
    }

    #[test]
    fn ps_rounding() {
        assert_eq!(Timestamp::from_secs_ps(1.000_000_000_000_4e-3).as_ps(), 1_000_000_000);
        assert_eq!(Timestamp::from_secs_ps(-2.6e-12).as_ps(), -3);
    }
}
