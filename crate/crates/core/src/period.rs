//! Sampling periods written as `"15s"`, `"30m"`, `"1h"`.

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A strictly positive duration with one-second resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period(u64);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PeriodError {
    #[error("empty duration")]
    Empty,
    #[error("duration must start with an integer: {0:?}")]
    MissingNumber(String),
    #[error("unknown duration unit: {0:?}")]
    UnknownUnit(String),
    #[error("duration must be positive")]
    Zero,
    #[error("duration overflow")]
    Overflow,
}

impl Period {
    pub const fn from_secs(secs: u64) -> Option<Period> {
        if secs == 0 {
            None
        } else {
            Some(Period(secs))
        }
    }

    /// Panics on zero; for constants known to be positive.
    pub const fn secs(secs: u64) -> Period {
        assert!(secs > 0, "period must be positive");
        Period(secs)
    }

    pub const fn minutes(m: u64) -> Period {
        Period::secs(m * 60)
    }

    pub const fn hours(h: u64) -> Period {
        Period::secs(h * 3600)
    }

    pub const fn as_secs(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn to_chrono(self) -> chrono::TimeDelta {
        chrono::TimeDelta::seconds(self.0 as i64)
    }

    /// True when `self` is a whole multiple of `base`.
    pub fn is_multiple_of(self, base: Period) -> bool {
        self.0.is_multiple_of(base.0)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(3600) {
            write!(f, "{}h", self.0 / 3600)
        } else if self.0.is_multiple_of(60) {
            write!(f, "{}m", self.0 / 60)
        } else {
            write!(f, "{}s", self.0)
        }
    }
}

impl FromStr for Period {
    type Err = PeriodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(PeriodError::Empty);
        }
        let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
        let (digits, unit) = s.split_at(split);
        if digits.is_empty() {
            return Err(PeriodError::MissingNumber(s.into()));
        }
        let n: u64 = digits.parse().map_err(|_| PeriodError::Overflow)?;
        let scale = match unit {
            "s" => 1,
            "m" => 60,
            "h" => 3600,
            other => return Err(PeriodError::UnknownUnit(other.into())),
        };
        let secs = n.checked_mul(scale).ok_or(PeriodError::Overflow)?;
        Period::from_secs(secs).ok_or(PeriodError::Zero)
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
