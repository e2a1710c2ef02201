//! Local-time bookkeeping: fixed UTC offsets, local dates, night windows and
//! the storm window. Timestamps are Unix epoch milliseconds (UTC).

use std::fmt;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MS_PER_DAY: i64 = 86_400_000;
const DAYS_CE_TO_EPOCH: i32 = 719_163;

/// A calendar date in the run's local time, stored as days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalDate(pub i32);

impl LocalDate {
    pub fn from_naive(d: NaiveDate) -> Self {
        LocalDate(d.num_days_from_ce() - DAYS_CE_TO_EPOCH)
    }

    pub fn from_ymd(y: i32, m: u32, d: u32) -> Self {
        LocalDate::from_naive(NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date"))
    }

    pub fn to_naive(self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(self.0 + DAYS_CE_TO_EPOCH).expect("date in chrono range")
    }

    pub fn succ(self) -> Self {
        LocalDate(self.0 + 1)
    }

    pub fn pred(self) -> Self {
        LocalDate(self.0 - 1)
    }

    pub fn weekday(self) -> Weekday {
        self.to_naive().weekday()
    }

    pub fn is_weekend(self) -> bool {
        // 1970-01-01 was a Thursday; Monday = 0
        matches!((self.0 + 3).rem_euclid(7), 5 | 6)
    }
}

impl fmt::Display for LocalDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive())
    }
}

impl Serialize for LocalDate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_naive().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LocalDate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        NaiveDate::deserialize(d).map(LocalDate::from_naive)
    }
}

/// Fixed offset from UTC used for every local-time computation in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalClock {
    offset_ms: i64,
}

impl Default for LocalClock {
    /// UTC−4, Eastern daylight time.
    fn default() -> Self {
        LocalClock::from_offset_hours(-4.0)
    }
}

impl LocalClock {
    pub fn from_offset_seconds(offset_s: i64) -> Self {
        LocalClock {
            offset_ms: offset_s * 1000,
        }
    }

    pub fn from_offset_hours(hours: f64) -> Self {
        LocalClock {
            offset_ms: (hours * 3_600_000.0).round() as i64,
        }
    }

    pub fn offset_hours(&self) -> f64 {
        self.offset_ms as f64 / 3_600_000.0
    }

    pub fn date_of(&self, ts_ms: i64) -> LocalDate {
        LocalDate((ts_ms + self.offset_ms).div_euclid(MS_PER_DAY) as i32)
    }

    /// Milliseconds since local midnight.
    pub fn ms_of_day(&self, ts_ms: i64) -> i64 {
        (ts_ms + self.offset_ms).rem_euclid(MS_PER_DAY)
    }

    /// UTC timestamp of local midnight starting `date`.
    pub fn midnight(&self, date: LocalDate) -> i64 {
        date.0 as i64 * MS_PER_DAY - self.offset_ms
    }

    /// UTC timestamp of a local wall-clock time.
    pub fn at(&self, date: LocalDate, hour: u32, minute: u32) -> i64 {
        self.midnight(date) + (hour as i64 * 3600 + minute as i64 * 60) * 1000
    }

    pub fn local_datetime(&self, ts_ms: i64) -> NaiveDateTime {
        chrono::DateTime::from_timestamp_millis(ts_ms + self.offset_ms)
            .expect("timestamp in chrono range")
            .naive_utc()
    }
}

/// A daily local clock interval that may wrap past midnight. The night
/// starting on date `D` is labelled `D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightWindow {
    pub start_s: u32,
    pub end_s: u32,
}

impl Default for NightWindow {
    /// 20:00 to 07:00.
    fn default() -> Self {
        NightWindow {
            start_s: 20 * 3600,
            end_s: 7 * 3600,
        }
    }
}

impl NightWindow {
    pub fn new(start_s: u32, end_s: u32) -> Result<Self> {
        if start_s >= 86_400 || end_s > 86_400 || start_s == end_s {
            return Err(Error::InvalidConfig(format!("night window {start_s}..{end_s}")));
        }
        Ok(NightWindow { start_s, end_s })
    }

    pub fn wraps_midnight(&self) -> bool {
        self.end_s <= self.start_s
    }

    pub fn duration_ms(&self) -> i64 {
        let s = if self.wraps_midnight() {
            86_400 - self.start_s + self.end_s
        } else {
            self.end_s - self.start_s
        };
        s as i64 * 1000
    }

    /// UTC interval `[start, end)` of the night labelled `night`.
    pub fn interval(&self, clock: &LocalClock, night: LocalDate) -> (i64, i64) {
        let start = clock.midnight(night) + self.start_s as i64 * 1000;
        (start, start + self.duration_ms())
    }

    /// The night containing `ts_ms`, if any.
    pub fn night_of(&self, clock: &LocalClock, ts_ms: i64) -> Option<LocalDate> {
        let day = clock.date_of(ts_ms);
        let s = clock.ms_of_day(ts_ms);
        let (start, end) = (self.start_s as i64 * 1000, self.end_s as i64 * 1000);
        if self.wraps_midnight() {
            if s >= start {
                Some(day)
            } else if s < end {
                Some(day.pred())
            } else {
                None
            }
        } else if s >= start && s < end {
            Some(day)
        } else {
            None
        }
    }

    /// Per-night overlap (ms) of the UTC interval `[t0, t1)` with this window.
    pub fn split(&self, clock: &LocalClock, t0: i64, t1: i64, mut f: impl FnMut(LocalDate, i64)) {
        if t1 <= t0 {
            return;
        }
        let first = clock.date_of(t0).pred();
        let last = clock.date_of(t1);
        let mut d = first;
        while d <= last {
            let (a, b) = self.interval(clock, d);
            let ov = overlap(t0, t1, a, b);
            if ov > 0 {
                f(d, ov);
            }
            d = d.succ();
        }
    }
}

/// Per-date overlap (ms) of `[t0, t1)` with local weekend days.
pub fn split_weekend(clock: &LocalClock, t0: i64, t1: i64, mut f: impl FnMut(LocalDate, i64)) {
    if t1 <= t0 {
        return;
    }
    let mut d = clock.date_of(t0);
    let last = clock.date_of(t1);
    while d <= last {
        if d.is_weekend() {
            let ov = overlap(t0, t1, clock.midnight(d), clock.midnight(d.succ()));
            if ov > 0 {
                f(d, ov);
            }
        }
        d = d.succ();
    }
}

pub fn overlap(a0: i64, a1: i64, b0: i64, b1: i64) -> i64 {
    (a1.min(b1) - a0.max(b0)).max(0)
}

/// Half-open UTC interval `[start_ms, end_ms)` bounding the storm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StormWindow {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl StormWindow {
    pub fn new(start_ms: i64, end_ms: i64) -> Result<Self> {
        if end_ms <= start_ms {
            return Err(Error::InvalidConfig("storm window end precedes start".into()));
        }
        Ok(StormWindow { start_ms, end_ms })
    }

    /// 2022-09-22 20:00 to 2022-10-01 07:00 in the given local time.
    pub fn hurricane_ian(clock: &LocalClock) -> Self {
        StormWindow {
            start_ms: clock.at(LocalDate::from_ymd(2022, 9, 22), 20, 0),
            end_ms: clock.at(LocalDate::from_ymd(2022, 10, 1), 7, 0),
        }
    }

    pub fn contains(&self, ts_ms: i64) -> bool {
        ts_ms >= self.start_ms && ts_ms < self.end_ms
    }

    /// Nights whose window intersects the storm window, in order.
    pub fn nights(&self, clock: &LocalClock, window: &NightWindow) -> Vec<LocalDate> {
        let mut out = Vec::new();
        let mut d = clock.date_of(self.start_ms).pred();
        let last = clock.date_of(self.end_ms);
        while d <= last {
            let (a, b) = window.interval(clock, d);
            if overlap(a, b, self.start_ms, self.end_ms) > 0 {
                out.push(d);
            }
            d = d.succ();
        }
        out
    }

    /// A night's window clipped to the storm window.
    pub fn clip_night(&self, clock: &LocalClock, window: &NightWindow, night: LocalDate) -> (i64, i64) {
        let (a, b) = window.interval(clock, night);
        (a.max(self.start_ms), b.min(self.end_ms))
    }
}

/// Parses Unix epoch seconds (integer or fractional) or RFC 3339 into epoch
/// milliseconds.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let t = s.trim();
    if let Ok(secs) = t.parse::<i64>() {
        return secs
            .checked_mul(1000)
            .ok_or_else(|| Error::InvalidTimestamp(s.to_string()));
    }
    if let Ok(secs) = t.parse::<f64>() {
        if secs.is_finite() {
            return Ok((secs * 1000.0).round() as i64);
        }
    }
    chrono::DateTime::parse_from_rfc3339(t)
        .map(|dt| dt.timestamp_millis())
        .map_err(|_| Error::InvalidTimestamp(s.to_string()))
}
