use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: i64 = 1440;

/// Minutes since 1970-01-01T00:00. Never negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Timestamp(i64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);

    pub fn from_minutes(minutes: i64) -> Result<Self> {
        if minutes < 0 {
            return Err(Error::invalid(format!("negative timestamp {minutes}")));
        }
        Ok(Timestamp(minutes))
    }

    pub fn minutes(self) -> i64 {
        self.0
    }

    pub fn date(self) -> Date {
        Date(self.0.div_euclid(MINUTES_PER_DAY) as i32)
    }

    pub fn minute_of_day(self) -> i64 {
        self.0.rem_euclid(MINUTES_PER_DAY)
    }

    pub fn hour_of_day(self) -> f64 {
        self.minute_of_day() as f64 / 60.0
    }

    /// Fractional hours elapsed since `earlier` (negative if `earlier` is later).
    pub fn hours_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 60.0
    }

    /// Adds a duration in hours, rounded to the nearest minute. Negative
    /// durations saturate at the epoch.
    pub fn plus_hours(self, hours: f64) -> Timestamp {
        let delta = (hours * 60.0).round();
        let m = (self.0 as f64 + delta).max(0.0);
        Timestamp(m as i64)
    }

    pub fn plus_minutes(self, minutes: i64) -> Timestamp {
        Timestamp((self.0 + minutes).max(0))
    }
}

impl TryFrom<i64> for Timestamp {
    type Error = Error;
    fn try_from(m: i64) -> Result<Self> {
        Timestamp::from_minutes(m)
    }
}

impl From<Timestamp> for i64 {
    fn from(t: Timestamp) -> i64 {
        t.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.minute_of_day();
        write!(f, "{}T{:02}:{:02}", self.date(), m / 60, m % 60)
    }
}

/// Calendar day, counted from 1970-01-01. Serialized as `YYYY-MM-DD`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Date(pub i32);

impl Date {
    pub fn from_days(days: i32) -> Self {
        Date(days)
    }

    pub fn days(self) -> i32 {
        self.0
    }

    pub fn ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        let d = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| Error::invalid(format!("no such date {year}-{month}-{day}")))?;
        Ok(Self::from_naive(d))
    }

    fn from_naive(d: NaiveDate) -> Self {
        Date(d.num_days_from_ce() - EPOCH_CE_DAYS)
    }

    fn to_naive(self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(self.0 + EPOCH_CE_DAYS).expect("date in range")
    }

    /// 0 = Monday ... 6 = Sunday.
    pub fn weekday(self) -> u8 {
        (self.0 + 3).rem_euclid(7) as u8
    }

    pub fn is_weekend(self) -> bool {
        self.weekday() >= 5
    }

    pub fn start(self) -> Timestamp {
        Timestamp((self.0 as i64 * MINUTES_PER_DAY).max(0))
    }

    pub fn offset(self, days: i32) -> Date {
        Date(self.0 + days)
    }

    pub fn days_until(self, later: Date) -> i32 {
        later.0 - self.0
    }

    pub fn parse(s: &str) -> Result<Self> {
        let d = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::invalid(format!("bad date {s:?}: {e}")))?;
        Ok(Self::from_naive(d))
    }
}

// 1970-01-01 in chrono's days-from-CE numbering.
const EPOCH_CE_DAYS: i32 = 719_163;

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

impl TryFrom<String> for Date {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Date::parse(&s)
    }
}

impl From<Date> for String {
    fn from(d: Date) -> String {
        d.to_string()
    }
}
