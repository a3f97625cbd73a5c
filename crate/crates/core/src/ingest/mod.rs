//! Raw holdings snapshots, trade ticks and security metadata: parsing, timestamp
//! correction, and the twelve-step cleaning pipeline with its ledger.

mod config;
mod filters;
mod io;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, NaiveDateTime, Timelike, Utc};
use chrono_tz::America::New_York;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{Exclusion, ExclusionAction, VenueTable};
pub use filters::{apply_filters, prepare_ticks, TickMap, FILTER_STEPS};
pub use io::{
    parse_tick_timestamp, parse_utc_timestamp, read_aliases, read_clean, read_exclusions, read_metadata,
    read_snapshots, read_ticks, read_venues, write_clean, write_clean_series_csv, write_ledger, write_metadata,
    write_snapshots, write_ticks, CLEAN_SERIES_FILE, CLEAN_TICKS_FILE, SECURITIES_FILE,
};

/// Holdings snapshot as delivered, UTC retrieval time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSnapshot {
    pub ticker: String,
    pub observed_at: DateTime<Utc>,
    pub holders: u64,
}

/// Holdings snapshot after delay correction, in New York local time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub ticker: String,
    pub at: NaiveDateTime,
    pub holders: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeTick {
    pub ticker: String,
    /// New York local time.
    pub traded_at: NaiveDateTime,
    pub price: f64,
    pub exchange: String,
}

/// A cleaned trade: New York local time and split-adjusted price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    pub at: NaiveDateTime,
    pub price: f64,
}

/// One retained holdings observation of a stock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub at: NaiveDateTime,
    pub holders: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sector {
    Energy,
    Materials,
    Industrials,
    ConsumerDiscretionary,
    ConsumerStaples,
    HealthCare,
    Financials,
    InformationTechnology,
    CommunicationServices,
    Utilities,
    RealEstate,
    Unknown,
}

impl Sector {
    pub const GICS: [Sector; 11] = [
        Sector::Energy,
        Sector::Materials,
        Sector::Industrials,
        Sector::ConsumerDiscretionary,
        Sector::ConsumerStaples,
        Sector::HealthCare,
        Sector::Financials,
        Sector::InformationTechnology,
        Sector::CommunicationServices,
        Sector::Utilities,
        Sector::RealEstate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Sector::Energy => "Energy",
            Sector::Materials => "Materials",
            Sector::Industrials => "Industrials",
            Sector::ConsumerDiscretionary => "Consumer Discretionary",
            Sector::ConsumerStaples => "Consumer Staples",
            Sector::HealthCare => "Health Care",
            Sector::Financials => "Financials",
            Sector::InformationTechnology => "Information Technology",
            Sector::CommunicationServices => "Communication Services",
            Sector::Utilities => "Utilities",
            Sector::RealEstate => "Real Estate",
            Sector::Unknown => "unknown",
        }
    }

    /// Accepts the GICS label, case-insensitively and ignoring spaces, `_` and `-`.
    pub fn parse(s: &str) -> Option<Sector> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Sector::GICS
            .iter()
            .chain(std::iter::once(&Sector::Unknown))
            .copied()
            .find(|sec| {
                let label: String = sec
                    .label()
                    .chars()
                    .filter(|c| c.is_alphanumeric())
                    .flat_map(char::to_lowercase)
                    .collect();
                label == key
            })
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityMeta {
    pub ticker: String,
    pub share_code: i32,
    /// (effective date, ratio): prices before the date are divided by the ratio.
    pub split_events: Vec<(NaiveDate, f64)>,
    pub market_cap_series: BTreeMap<NaiveDate, f64>,
    pub sector: Sector,
    pub dual_class: bool,
}

impl SecurityMeta {
    /// Latest market cap on or before `date`.
    pub fn market_cap_on(&self, date: NaiveDate) -> Option<f64> {
        self.market_cap_series.range(..=date).next_back().map(|(_, &v)| v)
    }
}

/// A record the loader could not use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub source: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerStep {
    pub step: usize,
    pub name: String,
    pub observations: usize,
    pub securities: usize,
}

/// Observation and security counts surviving each cleaning step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterLedger {
    pub steps: Vec<LedgerStep>,
    pub rejected: Vec<Rejection>,
}

impl FilterLedger {
    pub fn is_monotone(&self) -> bool {
        self.steps.windows(2).all(|w| {
            w[1].observations <= w[0].observations && w[1].securities <= w[0].securities
        })
    }

    /// True when no step removed anything.
    pub fn no_attrition(&self) -> bool {
        self.steps.windows(2).all(|w| {
            w[1].observations == w[0].observations && w[1].securities == w[0].securities
        })
    }
}

/// Cleaned per-stock holdings series plus the ticks they were matched against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanData {
    pub series: BTreeMap<String, Vec<Observation>>,
    /// Session-hour ticks for every retained stock and the market proxy.
    pub ticks: TickMap,
    pub meta: BTreeMap<String, SecurityMeta>,
    pub market_ticker: String,
}

impl CleanData {
    pub fn n_observations(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    /// Flattens the series back into snapshots, e.g. to re-run the filters.
    pub fn snapshots(&self) -> Vec<Snapshot> {
        self.series
            .iter()
            .flat_map(|(t, obs)| {
                obs.iter().map(move |o| Snapshot {
                    ticker: t.clone(),
                    at: o.at,
                    holders: o.holders,
                })
            })
            .collect()
    }
}

pub const ALLOWED_DELAYS: [i64; 3] = [30, 45, 60];

pub fn validate_delay(delay_minutes: i64) -> Result<()> {
    if ALLOWED_DELAYS.contains(&delay_minutes) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "delay_minutes must be one of 30, 45, 60 (got {delay_minutes})"
        )))
    }
}

/// Shifts each retrieval time back by the reporting delay and converts it to
/// New York local time. Record order is preserved.
pub fn adjust_timestamps(snapshots: Vec<RawSnapshot>, delay_minutes: i64) -> Result<Vec<Snapshot>> {
    validate_delay(delay_minutes)?;
    let delay = Duration::minutes(delay_minutes);
    Ok(snapshots
        .into_iter()
        .map(|s| Snapshot {
            at: (s.observed_at - delay).with_timezone(&New_York).naive_local(),
            ticker: s.ticker,
            holders: s.holders,
        })
        .collect())
}

fn hour_key(t: NaiveDateTime) -> (NaiveDate, u32) {
    (t.date(), t.hour())
}

/// Keeps the last observation of each clock hour, then drops the later of two
/// consecutive retained observations that sit within `epsilon` on either side
/// of the same full hour (e.g. 11:59 and 12:01).
///
/// Input must be sorted by time.
pub fn dedupe_hourly(obs: &[Observation], epsilon: Duration) -> Vec<Observation> {
    let mut per_hour: Vec<Observation> = Vec::with_capacity(obs.len());
    for o in obs {
        match per_hour.last_mut() {
            Some(last) if hour_key(last.at) == hour_key(o.at) => *last = *o,
            _ => per_hour.push(*o),
        }
    }
    let mut out: Vec<Observation> = Vec::with_capacity(per_hour.len());
    for o in per_hour {
        if let Some(prev) = out.last() {
            if straddles_hour(prev.at, o.at, epsilon) {
                continue;
            }
        }
        out.push(o);
    }
    out
}

fn straddles_hour(a: NaiveDateTime, b: NaiveDateTime, epsilon: Duration) -> bool {
    if hour_key(a) == hour_key(b) {
        return false;
    }
    let boundary = b
        .date()
        .and_hms_opt(b.hour(), 0, 0)
        .expect("valid hour boundary");
    a < boundary && boundary - a <= epsilon && b - boundary <= epsilon
}
