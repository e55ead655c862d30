//! Time windows and timestamp units.
//!
//! All analysis runs on microseconds since the Unix epoch (UTC). Raw
//! telemetry may arrive in seconds or milliseconds; [`TimeUnit`] records
//! which one a collection currently uses until [`crate::preprocess::to_utc`]
//! rescales it.

use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MICROS_PER_SECOND: i64 = 1_000_000;
pub const MICROS_PER_HOUR: i64 = 3_600 * MICROS_PER_SECOND;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimeError {
    #[error("time window start ({start}) must be before end ({end})")]
    EmptyWindow { start: i64, end: i64 },
    #[error("cannot parse timestamp {0:?}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Seconds,
    Milliseconds,
    Microseconds,
}

impl TimeUnit {
    pub const fn micros_per_unit(self) -> i64 {
        match self {
            TimeUnit::Seconds => MICROS_PER_SECOND,
            TimeUnit::Milliseconds => 1_000,
            TimeUnit::Microseconds => 1,
        }
    }

    /// Converts a value expressed in `self` into microseconds.
    pub fn to_micros(self, value: i64) -> i64 {
        value.saturating_mul(self.micros_per_unit())
    }

    /// Converts microseconds into `self`, flooring towards negative infinity.
    pub fn from_micros(self, micros: i64) -> i64 {
        micros.div_euclid(self.micros_per_unit())
    }

    /// Rescales `value` from `self` into `target`.
    pub fn convert(self, value: i64, target: TimeUnit) -> i64 {
        target.from_micros(self.to_micros(value))
    }

    /// The finer of two units.
    pub fn finer(self, other: TimeUnit) -> TimeUnit {
        if self.micros_per_unit() <= other.micros_per_unit() {
            self
        } else {
            other
        }
    }
}

impl fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeUnit::Seconds => "seconds",
            TimeUnit::Milliseconds => "milliseconds",
            TimeUnit::Microseconds => "microseconds",
        })
    }
}

/// Half-open UTC interval `[start, end)` with second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeWindow {
    start: i64,
    end: i64,
}

impl TimeWindow {
    pub fn new(start: i64, end: i64) -> Result<Self, TimeError> {
        if start >= end {
            return Err(TimeError::EmptyWindow { start, end });
        }
        Ok(Self { start, end })
    }

    /// Parses two RFC 3339 instants (or integer epoch seconds).
    pub fn parse(start: &str, end: &str) -> Result<Self, TimeError> {
        Self::new(parse_instant(start)?, parse_instant(end)?)
    }

    pub const fn start(&self) -> i64 {
        self.start
    }

    pub const fn end(&self) -> i64 {
        self.end
    }

    pub const fn start_micros(&self) -> i64 {
        self.start * MICROS_PER_SECOND
    }

    pub const fn end_micros(&self) -> i64 {
        self.end * MICROS_PER_SECOND
    }

    pub const fn duration_secs(&self) -> i64 {
        self.end - self.start
    }

    pub fn contains_micros(&self, t: i64) -> bool {
        t >= self.start_micros() && t < self.end_micros()
    }

    /// Whether `t`, expressed in `unit`, falls inside the window.
    pub fn contains(&self, t: i64, unit: TimeUnit) -> bool {
        self.contains_micros(unit.to_micros(t))
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains_window(&self, other: &TimeWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Widens the window by `secs` on both sides.
    pub fn padded(&self, secs: i64) -> TimeWindow {
        let secs = secs.max(0);
        TimeWindow {
            start: self.start - secs,
            end: self.end + secs,
        }
    }

    /// The hour-aligned window `[floor_hour(t), floor_hour(t) + 1h)` holding `t` (µs).
    pub fn hour_of_micros(t: i64) -> TimeWindow {
        let start = t.div_euclid(MICROS_PER_HOUR) * 3_600;
        TimeWindow {
            start,
            end: start + 3_600,
        }
    }

    /// Clamps `t` (µs) into the window.
    pub fn clamp_micros(&self, t: i64) -> i64 {
        t.clamp(self.start_micros(), self.end_micros() - 1)
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} .. {}", format_secs(self.start), format_secs(self.end))
    }
}

#[derive(Serialize, Deserialize)]
struct RawWindow {
    start: Instant,
    end: Instant,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Instant {
    Secs(i64),
    Text(String),
}

impl Instant {
    fn secs(&self) -> Result<i64, TimeError> {
        match self {
            Instant::Secs(s) => Ok(*s),
            Instant::Text(t) => parse_instant(t),
        }
    }
}

impl Serialize for TimeWindow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawWindow {
            start: Instant::Text(format_secs(self.start)),
            end: Instant::Text(format_secs(self.end)),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TimeWindow {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawWindow::deserialize(deserializer)?;
        let start = raw.start.secs().map_err(serde::de::Error::custom)?;
        let end = raw.end.secs().map_err(serde::de::Error::custom)?;
        TimeWindow::new(start, end).map_err(serde::de::Error::custom)
    }
}

/// Parses an RFC 3339 instant or an integer number of epoch seconds.
pub fn parse_instant(text: &str) -> Result<i64, TimeError> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Ok(secs);
    }
    DateTime::parse_from_rfc3339(text)
        .map(|dt| dt.timestamp())
        .map_err(|_| TimeError::Unparseable(text.to_string()))
}

/// Parses an RFC 3339 instant into microseconds.
pub fn parse_instant_micros(text: &str) -> Result<i64, TimeError> {
    DateTime::parse_from_rfc3339(text.trim())
        .map(|dt| dt.timestamp_micros())
        .map_err(|_| TimeError::Unparseable(text.to_string()))
}

pub fn format_secs(secs: i64) -> String {
    match Utc.timestamp_opt(secs, 0).single() {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
        None => secs.to_string(),
    }
}

pub fn format_micros(micros: i64) -> String {
    match DateTime::<Utc>::from_timestamp_micros(micros) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
        None => micros.to_string(),
    }
}

/// `HH:MM` of a microsecond instant, as used in short observations.
pub fn format_hhmm(micros: i64) -> String {
    match DateTime::<Utc>::from_timestamp_micros(micros) {
        Some(dt) => dt.format("%H:%M").to_string(),
        None => micros.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rejects_empty() {
        assert!(TimeWindow::new(10, 10).is_err());
        assert!(TimeWindow::new(11, 10).is_err());
        assert!(TimeWindow::new(10, 11).is_ok());
    }

    #[test]
    fn window_parses_rfc3339() {
        let w = TimeWindow::parse("2025-06-05T18:10:05Z", "2025-06-05T18:34:05Z").unwrap();
        assert_eq!(w.start(), 1_749_147_005);
        assert_eq!(w.duration_secs(), 24 * 60);
        assert_eq!(w.to_string(), "2025-06-05T18:10:05Z .. 2025-06-05T18:34:05Z");
    }

    #[test]
    fn window_serde_accepts_seconds_and_text() {
        let w: TimeWindow = serde_json::from_str(r#"{"start": 100, "end": "1970-01-01T00:03:20Z"}"#).unwrap();
        assert_eq!((w.start(), w.end()), (100, 200));
        let back: TimeWindow = serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<TimeWindow>(r#"{"start": 5, "end": 5}"#).is_err());
    }

    #[test]
    fn half_open_containment() {
        let w = TimeWindow::new(10, 20).unwrap();
        assert!(w.contains(10, TimeUnit::Seconds));
        assert!(!w.contains(20, TimeUnit::Seconds));
        assert!(w.contains(19_999, TimeUnit::Milliseconds));
    }

    #[test]
    fn hour_floor() {
        // 18:05 on 2025-06-05
        let t = (1_749_146_400 + 5 * 60) * MICROS_PER_SECOND;
        let h = TimeWindow::hour_of_micros(t);
        assert_eq!(h.start(), 1_749_146_400);
        assert_eq!(h.end(), 1_749_146_400 + 3_600);
        assert_eq!(TimeWindow::hour_of_micros(-1).start(), -3_600);
    }

    #[test]
    fn unit_conversion() {
        assert_eq!(TimeUnit::Seconds.convert(3, TimeUnit::Microseconds), 3_000_000);
        assert_eq!(TimeUnit::Microseconds.convert(3_999_999, TimeUnit::Seconds), 3);
        assert_eq!(TimeUnit::Seconds.finer(TimeUnit::Milliseconds), TimeUnit::Milliseconds);
    }
}
