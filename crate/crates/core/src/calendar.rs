//! NYSE trading calendar: weekends, full holidays and 13:00 early closes.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Weekday};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../data/nyse_calendar.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DayKind {
    Holiday,
    HalfDay,
}

#[derive(Debug, Clone)]
pub struct TradingCalendar {
    special: BTreeMap<NaiveDate, DayKind>,
}

pub fn session_open() -> NaiveTime {
    NaiveTime::from_hms_opt(9, 30, 0).unwrap()
}

fn full_close() -> NaiveTime {
    NaiveTime::from_hms_opt(16, 0, 0).unwrap()
}

fn early_close() -> NaiveTime {
    NaiveTime::from_hms_opt(13, 0, 0).unwrap()
}

impl Default for TradingCalendar {
    fn default() -> Self {
        Self::parse(BUNDLED, Path::new("<bundled calendar>")).expect("bundled calendar parses")
    }
}

impl TradingCalendar {
    pub fn bundled() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses `date,kind` rows where kind is `holiday` or `half_day`.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut special = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (date, kind) = line
                .split_once(',')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected date,kind", lineno + 1)))?;
            let date = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
                .map_err(|e| Error::format(origin, format!("line {}: {e}", lineno + 1)))?;
            let kind = match kind.trim() {
                "holiday" => DayKind::Holiday,
                "half_day" => DayKind::HalfDay,
                other => {
                    return Err(Error::format(
                        origin,
                        format!("line {}: unknown day kind `{other}`", lineno + 1),
                    ))
                }
            };
            special.insert(date, kind);
        }
        Ok(Self { special })
    }

    pub fn is_trading_day(&self, date: NaiveDate) -> bool {
        !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
            && self.special.get(&date) != Some(&DayKind::Holiday)
    }

    pub fn is_half_day(&self, date: NaiveDate) -> bool {
        self.special.get(&date) == Some(&DayKind::HalfDay)
    }

    /// Session close for a trading day (16:00, or 13:00 on early-close days).
    pub fn close_time(&self, date: NaiveDate) -> NaiveTime {
        if self.is_half_day(date) {
            early_close()
        } else {
            full_close()
        }
    }

    /// Session length in minutes.
    pub fn session_minutes(&self, date: NaiveDate) -> i64 {
        (self.close_time(date) - session_open()).num_minutes()
    }

    pub fn next_trading_day(&self, date: NaiveDate) -> NaiveDate {
        let mut d = date + Duration::days(1);
        while !self.is_trading_day(d) {
            d += Duration::days(1);
        }
        d
    }

    /// First trading day on or after `date`.
    pub fn first_on_or_after(&self, date: NaiveDate) -> NaiveDate {
        if self.is_trading_day(date) {
            date
        } else {
            self.next_trading_day(date)
        }
    }

    /// `n` consecutive trading days starting at the first trading day on or after `start`.
    pub fn trading_days_from(&self, start: NaiveDate, n: usize) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(n);
        let mut d = self.first_on_or_after(start);
        while out.len() < n {
            out.push(d);
            d = self.next_trading_day(d);
        }
        out
    }

    /// Number of trading days strictly between `a` and `b` (a < b).
    pub fn trading_days_between(&self, a: NaiveDate, b: NaiveDate) -> usize {
        let mut count = 0;
        let mut d = a + Duration::days(1);
        while d < b {
            if self.is_trading_day(d) {
                count += 1;
            }
            d += Duration::days(1);
        }
        count
    }
}
