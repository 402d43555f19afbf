//! Timestamps and injectable clocks.
//!
//! Every module takes time from a [`Clock`] so the replay harness can drive
//! the whole system off a virtual clock while production uses wall time.

use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MICROS_PER_SECOND: i64 = 1_000_000;
pub const MICROS_PER_MINUTE: i64 = 60 * MICROS_PER_SECOND;
pub const MICROS_PER_DAY: i64 = 24 * 60 * MICROS_PER_MINUTE;

/// A UTC instant with microsecond precision.
///
/// Serialized as an RFC 3339 string with exactly six fractional digits so
/// that exports are byte-stable across runs and backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_micros(micros: i64) -> Self {
        Timestamp(micros)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn parse_rfc3339(s: &str) -> Result<Self, TimeError> {
        let dt = DateTime::parse_from_rfc3339(s).map_err(|e| TimeError::Parse {
            input: s.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Timestamp(dt.with_timezone(&Utc).timestamp_micros()))
    }

    pub fn to_rfc3339(self) -> String {
        let dt: DateTime<Utc> = Utc
            .timestamp_micros(self.0)
            .single()
            .unwrap_or_else(|| Utc.timestamp_micros(0).single().unwrap());
        dt.to_rfc3339_opts(SecondsFormat::Micros, true)
    }

    /// UTC calendar date, `YYYY-MM-DD`.
    pub fn date(self) -> String {
        let dt: DateTime<Utc> = Utc.timestamp_micros(self.0).single().unwrap();
        dt.format("%Y-%m-%d").to_string()
    }

    pub const fn plus_micros(self, d: i64) -> Self {
        Timestamp(self.0 + d)
    }

    pub const fn plus_seconds(self, s: i64) -> Self {
        Timestamp(self.0 + s * MICROS_PER_SECOND)
    }

    pub const fn plus_minutes(self, m: i64) -> Self {
        Timestamp(self.0 + m * MICROS_PER_MINUTE)
    }

    pub const fn plus_days(self, d: i64) -> Self {
        Timestamp(self.0 + d * MICROS_PER_DAY)
    }

    /// Signed distance `self - other` in microseconds.
    pub const fn micros_since(self, other: Timestamp) -> i64 {
        self.0 - other.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_rfc3339())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse_rfc3339(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TimeError {
    #[error("invalid timestamp {input:?}: {reason}")]
    Parse { input: String, reason: String },
}

/// Source of the current time.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Wall-clock time.
#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp(Utc::now().timestamp_micros())
    }
}

/// A manually driven clock for deterministic replay.
#[derive(Debug, Default)]
pub struct ManualClock {
    micros: AtomicI64,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Arc<Self> {
        Arc::new(ManualClock {
            micros: AtomicI64::new(start.micros()),
        })
    }

    pub fn set(&self, t: Timestamp) {
        self.micros.store(t.micros(), Ordering::SeqCst);
    }

    pub fn advance_micros(&self, d: i64) {
        self.micros.fetch_add(d, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.micros.load(Ordering::SeqCst))
    }
}
