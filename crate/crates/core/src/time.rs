//! Simulated time in integer picoseconds.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, meters per second.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point (or span) of simulated time, in picoseconds.
///
/// `SimTime::INFINITY` is reserved and means "no event".
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const INFINITY: SimTime = SimTime(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * 1_000)
    }

    pub const fn from_us(us: u64) -> Self {
        SimTime(us * 1_000_000)
    }

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms * 1_000_000_000)
    }

    pub const fn ps(self) -> u64 {
        self.0
    }

    pub const fn is_infinite(self) -> bool {
        self.0 == u64::MAX
    }

    /// Addition that sticks at infinity instead of wrapping.
    pub const fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }

    /// Propagation delay over `meters` of fiber at `light_fraction` of c,
    /// rounded half-up to whole picoseconds.
    pub fn propagation_delay(meters: f64, light_fraction: f64) -> SimTime {
        let seconds = meters / (SPEED_OF_LIGHT * light_fraction);
        SimTime((seconds * 1e12 + 0.5).floor() as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        self.saturating_add(rhs)
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "SimTime(inf)")
        } else {
            write!(f, "SimTime({}ps)", self.0)
        }
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}ps", self.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_saturates() {
        assert_eq!(SimTime::INFINITY + SimTime::from_ms(3), SimTime::INFINITY);
        assert!(SimTime::INFINITY.is_infinite());
        assert!(!SimTime::ZERO.is_infinite());
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(SimTime::from_ms(1).ps(), 1_000_000_000);
        assert_eq!(SimTime::from_us(2), SimTime::from_ns(2_000));
    }

    #[test]
    fn delay_rounds_half_up() {
        // 1 m in vacuum is 3335.64095... ps
        assert_eq!(SimTime::propagation_delay(1.0, 1.0).ps(), 3336);
        // exact half: c * 1e-12 * 2.5 meters takes 2.5 ps
        let meters = SPEED_OF_LIGHT * 2.5e-12;
        assert_eq!(SimTime::propagation_delay(meters, 1.0).ps(), 3);
    }
}
