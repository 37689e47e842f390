//! Simulation time.
//!
//! All components share one time base: milliseconds since the Unix epoch.
//! Simulated runs start near the epoch; service mode feeds wall-clock time
//! through the same type, so audit timestamps and signed-URL expiries are
//! meaningful in both.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// A point in simulated time, in milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub i64);

/// A span of simulated time in milliseconds. May be negative when produced
/// by subtraction; constructors used for configuration reject that.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimDuration(pub i64);

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);
    pub const MILLISECOND: SimDuration = SimDuration(1);
    pub const SECOND: SimDuration = SimDuration(1_000);
    pub const MINUTE: SimDuration = SimDuration(60_000);
    pub const HOUR: SimDuration = SimDuration(3_600_000);
    pub const DAY: SimDuration = SimDuration(86_400_000);

    pub const fn from_millis(ms: i64) -> Self {
        SimDuration(ms)
    }

    pub const fn from_secs(secs: i64) -> Self {
        SimDuration(secs * 1_000)
    }

    pub const fn from_mins(mins: i64) -> Self {
        SimDuration(mins * 60_000)
    }

    pub const fn from_hours(hours: i64) -> Self {
        SimDuration(hours * 3_600_000)
    }

    pub const fn from_days(days: i64) -> Self {
        SimDuration(days * 86_400_000)
    }

    /// Rounds to the nearest millisecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        SimDuration((secs * 1_000.0).round() as i64)
    }

    pub fn from_hours_f64(hours: f64) -> Self {
        SimDuration((hours * 3_600_000.0).round() as i64)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn as_hours_f64(self) -> f64 {
        self.0 as f64 / 3_600_000.0
    }

    /// Number of whole hours needed to cover this span (0 for non-positive spans).
    pub fn ceil_hours(self) -> u64 {
        if self.0 <= 0 {
            0
        } else {
            let h = Self::HOUR.0;
            ((self.0 + h - 1) / h) as u64
        }
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl SimTime {
    pub const EPOCH: SimTime = SimTime(0);

    pub const fn from_millis(ms: i64) -> Self {
        SimTime(ms)
    }

    pub const fn from_secs(secs: i64) -> Self {
        SimTime(secs * 1_000)
    }

    pub fn from_hours_f64(hours: f64) -> Self {
        SimTime((hours * 3_600_000.0).round() as i64)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    /// Whole Unix seconds, rounded toward negative infinity.
    pub fn unix_seconds(self) -> i64 {
        self.0.div_euclid(1_000)
    }

    pub fn as_hours_f64(self) -> f64 {
        self.0 as f64 / 3_600_000.0
    }

    /// Current wall-clock time; used only by service mode.
    pub fn wall_clock() -> Self {
        SimTime(Utc::now().timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        DateTime::<Utc>::from_timestamp_millis(self.0).unwrap_or_default()
    }

    /// RFC 3339 / ISO 8601 with millisecond precision and a `Z` suffix.
    pub fn to_iso8601(self) -> String {
        self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn parse_iso8601(s: &str) -> Result<Self, chrono::ParseError> {
        let dt = DateTime::parse_from_rfc3339(s.trim())?;
        Ok(SimTime(dt.timestamp_millis()))
    }

    pub fn saturating_since(self, earlier: SimTime) -> SimDuration {
        SimDuration((self.0 - earlier.0).max(0))
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl Sub<SimDuration> for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0 - rhs.0)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 + rhs.0)
    }
}

impl AddAssign for SimDuration {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl Sub for SimDuration {
    type Output = SimDuration;
    fn sub(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}s", self.as_secs_f64())
    }
}

/// Monotone simulation clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clock {
    now: SimTime,
    tick: SimDuration,
}

/// Returned when a caller tries to move a clock backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("clock cannot move backwards from {now} to {requested}")]
pub struct ClockRegression {
    pub now: SimTime,
    pub requested: SimTime,
}

impl Clock {
    /// Default tick: one minute of simulated time.
    pub const DEFAULT_TICK: SimDuration = SimDuration::MINUTE;

    pub fn new(start: SimTime, tick: SimDuration) -> Self {
        assert!(tick.is_positive(), "clock tick must be positive");
        Clock { now: start, tick }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn tick(&self) -> SimDuration {
        self.tick
    }

    pub fn advance_to(&mut self, t: SimTime) -> Result<(), ClockRegression> {
        if t < self.now {
            return Err(ClockRegression { now: self.now, requested: t });
        }
        self.now = t;
        Ok(())
    }

    /// Advances by one tick and returns the new time.
    pub fn step(&mut self) -> SimTime {
        self.now += self.tick;
        self.now
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::new(SimTime::EPOCH, Self::DEFAULT_TICK)
    }
}
