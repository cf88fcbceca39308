//! Fixed-point virtual time. One time unit is split into [`TICKS_PER_UNIT`]
//! integer ticks so event ordering never depends on floating-point rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

pub const TICKS_PER_UNIT: u64 = 1_000_000;

/// An instant or a duration, in ticks.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Time(pub u64);

impl Time {
    pub const ZERO: Time = Time(0);
    pub const MAX: Time = Time(u64::MAX);

    /// Rounds to the nearest tick; negative and NaN inputs clamp to zero.
    pub fn from_units(units: f64) -> Time {
        if units.is_nan() || units <= 0.0 {
            return Time::ZERO;
        }
        Time((units * TICKS_PER_UNIT as f64).round() as u64)
    }

    pub fn as_units(self) -> f64 {
        self.0 as f64 / TICKS_PER_UNIT as f64
    }

    pub fn saturating_sub(self, other: Time) -> Time {
        Time(self.0.saturating_sub(other.0))
    }
}

impl fmt::Debug for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.as_units())
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_units())
    }
}

impl Add for Time {
    type Output = Time;
    fn add(self, rhs: Time) -> Time {
        Time(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for Time {
    fn add_assign(&mut self, rhs: Time) {
        *self = *self + rhs;
    }
}

impl Sub for Time {
    type Output = Time;
    fn sub(self, rhs: Time) -> Time {
        self.saturating_sub(rhs)
    }
}

impl Mul<u64> for Time {
    type Output = Time;
    fn mul(self, rhs: u64) -> Time {
        Time(self.0.saturating_mul(rhs))
    }
}

impl Serialize for Time {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_units())
    }
}

impl<'de> Deserialize<'de> for Time {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let units = f64::deserialize(d)?;
        if units < 0.0 || !units.is_finite() {
            return Err(serde::de::Error::custom(
                "time must be finite and non-negative",
            ));
        }
        Ok(Time::from_units(units))
    }
}

/// Protocol timing aliases, already scaled to ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub delta: Time,
    pub sec: Time,
    pub min: Time,
}

impl Timing {
    /// `delta` time units per Δ, `sec_units` Δ per 1sec, `min_units` Δ per 1min.
    pub fn new(delta: f64, sec_units: f64, min_units: f64) -> Timing {
        Timing {
            delta: Time::from_units(delta),
            sec: Time::from_units(delta * sec_units),
            min: Time::from_units(delta * min_units),
        }
    }
}

impl Default for Timing {
    fn default() -> Self {
        Timing::new(1.0, 5.0, 30.0)
    }
}
