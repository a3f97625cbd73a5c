//! Holdings/price matching and the stock-time panel of position openings and
//! returns, plus the daily-frequency and detrended variants.

mod daily;
mod detrend;
pub(crate) mod io;
mod summary;

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::ingest::{CleanData, Observation, Sector, Tick};
use crate::stats;

pub use daily::{build_daily_panel, DailyObservation, DailyPanel};
pub use detrend::{detrend_levels, detrended_changes};
pub use io::{
    read_daily_panel, read_panel, write_daily_panel, write_panel, write_panel_csv, DAILY_SCHEMA, PANEL_SCHEMA,
    PANEL_SCHEMA_VERSION,
};
pub use summary::{summarize, summary_table, SummaryRow};

/// Regular-session hours per day.
pub const SESSION_HOURS: f64 = 6.5;
/// Upper bound on the spacing of two intraday observations, in minutes.
pub const MAX_INTRADAY_MINUTES: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObsKind {
    Intraday,
    Overnight,
    /// Close-to-close change of the daily-frequency panel.
    Daily,
}

impl ObsKind {
    pub fn code(self) -> u32 {
        match self {
            ObsKind::Intraday => 0,
            ObsKind::Overnight => 1,
            ObsKind::Daily => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ObsKind::Intraday),
            1 => Some(ObsKind::Overnight),
            2 => Some(ObsKind::Daily),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ObsKind::Intraday => "intraday",
            ObsKind::Overnight => "overnight",
            ObsKind::Daily => "daily",
        }
    }
}

/// Multiplier converting an interval change into full-day units.
///
/// Intraday: normalise to one hour, scale to the 6.5-hour session, then double
/// (session and overnight count as equal halves of a day). Overnight: double.
pub fn scaling_factor(kind: ObsKind, mnt: f64) -> Result<f64> {
    match kind {
        ObsKind::Intraday => {
            if !(mnt > 0.0) || !mnt.is_finite() {
                return Err(Error::Domain(format!("intraday spacing must be positive (got {mnt} minutes)")));
            }
            Ok(60.0 / mnt * SESSION_HOURS * 2.0)
        }
        ObsKind::Overnight => Ok(2.0),
        ObsKind::Daily => Ok(1.0),
    }
}

/// Scaled log change in holders, with one added to both counts.
pub fn position_openings(n_prev: u64, n_curr: u64, kind: ObsKind, mnt: f64) -> Result<f64> {
    let sf = scaling_factor(kind, mnt)?;
    Ok(((n_curr as f64 + 1.0) / (n_prev as f64 + 1.0)).ln() * sf)
}

/// Scaled log price return.
pub fn raw_return(p_prev: f64, p_curr: f64, kind: ObsKind, mnt: f64) -> Result<f64> {
    if !(p_prev > 0.0 && p_curr > 0.0) {
        return Err(Error::Domain(format!("prices must be positive (got {p_prev}, {p_curr})")));
    }
    let sf = scaling_factor(kind, mnt)?;
    Ok((p_curr / p_prev).ln() * sf)
}

/// Price of the latest tick strictly before `t`, or `None` if there is none.
pub fn match_last_trade(ticks: &[Tick], t: NaiveDateTime) -> Option<f64> {
    let idx = ticks.partition_point(|tick| tick.at < t);
    idx.checked_sub(1).map(|i| ticks[i].price)
}

/// The contiguous slice of a time-sorted tick series falling on `date`.
pub fn day_ticks(ticks: &[Tick], date: NaiveDate) -> &[Tick] {
    let start = ticks.partition_point(|t| t.at.date() < date);
    let end = start + ticks[start..].partition_point(|t| t.at.date() == date);
    &ticks[start..end]
}

/// Pooled clamping bounds at the given percentiles (0-100 scale).
pub fn winsor_bounds(series: &[f64], lower_pct: f64, upper_pct: f64) -> (f64, f64) {
    let q = stats::quantiles(series, &[lower_pct / 100.0, upper_pct / 100.0]);
    (q[0], q[1])
}

/// Clamps values outside the pooled percentile bounds; order and length kept.
pub fn winsorize(series: &[f64], lower_pct: f64, upper_pct: f64) -> Vec<f64> {
    if series.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = winsor_bounds(series, lower_pct, upper_pct);
    series.iter().map(|&x| x.clamp(lo, hi)).collect()
}

/// Static per-stock attributes the subgroup regressions need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityInfo {
    pub ticker: String,
    pub sector: Sector,
    pub market_caps: BTreeMap<NaiveDate, f64>,
}

impl SecurityInfo {
    pub fn market_cap_on(&self, date: NaiveDate) -> Option<f64> {
        self.market_caps.range(..=date).next_back().map(|(_, &v)| v)
    }
}

/// One stock-time row of the high-frequency panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelObservation {
    /// Index into [`Panel::securities`].
    pub stock: u32,
    /// Date of `t_curr`.
    pub day: NaiveDate,
    /// Position of this row in the stock's chronological sequence.
    pub seq: u32,
    pub t_prev: NaiveDateTime,
    pub t_curr: NaiveDateTime,
    pub kind: ObsKind,
    /// Minutes between `t_prev` and `t_curr`.
    pub mnt: f64,
    pub n_prev: u64,
    pub n_curr: u64,
    pub p_prev: f64,
    pub p_curr: f64,
    /// Winsorized position openings, daily log units.
    pub delta_n: f64,
    /// Winsorized position openings of the detrended holder series.
    pub delta_n_detrended: f64,
    pub raw_return: f64,
    /// NaN until standardized.
    pub std_return: f64,
    pub group: Option<Group>,
}

/// Market-proxy returns aligned row-for-row with a panel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketSeries {
    pub p_prev: Vec<f64>,
    pub p_curr: Vec<f64>,
    pub raw: Vec<f64>,
    pub std: Vec<f64>,
}

impl MarketSeries {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Keeps the entries whose mask bit is set.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        let pick = |v: &mut Vec<f64>| {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap_or(&false));
        };
        pick(&mut self.p_prev);
        pick(&mut self.p_curr);
        pick(&mut self.raw);
        pick(&mut self.std);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    pub securities: Vec<SecurityInfo>,
    /// Sorted by (stock, seq).
    pub rows: Vec<PanelObservation>,
}

impl Panel {
    /// Row ranges of each stock, in stock order (stocks without rows omitted).
    pub fn stock_ranges(&self) -> Vec<Range<usize>> {
        stock_ranges(&self.rows, |r| r.stock)
    }

    pub fn count(&self, kind: ObsKind) -> usize {
        self.rows.iter().filter(|r| r.kind == kind).count()
    }
}

pub(crate) fn stock_ranges<T>(rows: &[T], stock: impl Fn(&T) -> u32) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || stock(&rows[i]) != stock(&rows[start]) {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

/// Counters from panel assembly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub unmatchable_observations: usize,
    pub spacing_violations: usize,
}

pub fn security_infos(clean: &CleanData) -> Vec<SecurityInfo> {
    clean
        .series
        .keys()
        .map(|t| {
            let meta = clean.meta.get(t);
            SecurityInfo {
                ticker: t.clone(),
                sector: meta.map_or(Sector::Unknown, |m| m.sector),
                market_caps: meta.map(|m| m.market_cap_series.clone()).unwrap_or_default(),
            }
        })
        .collect()
}

struct Matched {
    obs: Observation,
    price: f64,
    market: f64,
}

/// Matches each observation to the stock's and the market's last earlier trade
/// of the same day; unmatched observations are dropped.
fn match_series(obs: &[Observation], ticks: &[Tick], market: &[Tick]) -> (Vec<Matched>, usize) {
    let mut out = Vec::with_capacity(obs.len());
    let mut dropped = 0;
    for o in obs {
        let date = o.at.date();
        let price = match_last_trade(day_ticks(ticks, date), o.at);
        let mkt = match_last_trade(day_ticks(market, date), o.at);
        match (price, mkt) {
            (Some(price), Some(market)) => out.push(Matched { obs: *o, price, market }),
            _ => dropped += 1,
        }
    }
    (out, dropped)
}

fn minutes_between(a: NaiveDateTime, b: NaiveDateTime) -> f64 {
    (b - a).num_microseconds().unwrap_or(i64::MAX) as f64 / 60e6
}

/// Assembles the high-frequency panel: consecutive same-day observations become
/// intraday rows and last-of-day to first-of-next-day becomes an overnight row.
/// Position openings (raw and detrended) are winsorized over the pooled panel.
pub fn build_panel(clean: &CleanData, cfg: &PipelineConfig) -> Result<(Panel, MarketSeries, BuildStats)> {
    let securities = security_infos(clean);
    let empty = Vec::new();
    let market_ticks = clean.ticks.get(&clean.market_ticker).unwrap_or(&empty);

    type StockRows = (Vec<PanelObservation>, Vec<(f64, f64)>, BuildStats);
    let per_stock: Vec<Result<StockRows>> = clean
        .series
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(stock, (ticker, obs))| {
            let ticks = clean.ticks.get(ticker).unwrap_or(&empty);
            let (matched, unmatched) = match_series(obs, ticks, market_ticks);
            let mut stats = BuildStats {
                unmatchable_observations: unmatched,
                ..Default::default()
            };
            let kept: Vec<Observation> = matched.iter().map(|m| m.obs).collect();
            let detrended = if kept.len() >= 2 {
                detrended_changes(&kept)?
            } else {
                Vec::new()
            };
            let mut rows = Vec::with_capacity(matched.len().saturating_sub(1));
            let mut mkt = Vec::with_capacity(rows.capacity());
            for (i, pair) in matched.windows(2).enumerate() {
                let (a, b) = (&pair[0], &pair[1]);
                let kind = if a.obs.at.date() == b.obs.at.date() {
                    ObsKind::Intraday
                } else {
                    ObsKind::Overnight
                };
                let mnt = minutes_between(a.obs.at, b.obs.at);
                if kind == ObsKind::Intraday && !(mnt > 0.0 && mnt <= MAX_INTRADAY_MINUTES) {
                    stats.spacing_violations += 1;
                    continue;
                }
                rows.push(PanelObservation {
                    stock: stock as u32,
                    day: b.obs.at.date(),
                    // window index, so a dropped spacing violation breaks lag continuity
                    seq: i as u32,
                    t_prev: a.obs.at,
                    t_curr: b.obs.at,
                    kind,
                    mnt,
                    n_prev: a.obs.holders,
                    n_curr: b.obs.holders,
                    p_prev: a.price,
                    p_curr: b.price,
                    delta_n: position_openings(a.obs.holders, b.obs.holders, kind, mnt)?,
                    delta_n_detrended: detrended[i],
                    raw_return: raw_return(a.price, b.price, kind, mnt)?,
                    std_return: f64::NAN,
                    group: None,
                });
                mkt.push((a.market, b.market));
            }
            Ok((rows, mkt, stats))
        })
        .collect();

    let mut rows = Vec::new();
    let mut market = MarketSeries::default();
    let mut stats = BuildStats::default();
    for res in per_stock {
        let (r, m, s) = res?;
        for (row, (mp, mc)) in r.iter().zip(&m) {
            market.p_prev.push(*mp);
            market.p_curr.push(*mc);
            market.raw.push(raw_return(*mp, *mc, row.kind, row.mnt)?);
        }
        rows.extend(r);
        stats.unmatchable_observations += s.unmatchable_observations;
        stats.spacing_violations += s.spacing_violations;
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("panel has no rows".into()));
    }
    market.std = vec![f64::NAN; market.raw.len()];

    let dn: Vec<f64> = rows.iter().map(|r| r.delta_n).collect();
    let dn = winsorize(&dn, cfg.winsor_lower_pct, cfg.winsor_upper_pct);
    let dt: Vec<f64> = rows.iter().map(|r| r.delta_n_detrended).collect();
    let dt = winsorize(&dt, cfg.winsor_lower_pct, cfg.winsor_upper_pct);
    for ((row, a), b) in rows.iter_mut().zip(dn).zip(dt) {
        row.delta_n = a;
        row.delta_n_detrended = b;
    }
    Ok((Panel { securities, rows }, market, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").unwrap()
    }

    #[test]
    fn scaling_factor_examples() {
        assert_eq!(scaling_factor(ObsKind::Intraday, 60.0).unwrap(), 13.0);
        assert_eq!(scaling_factor(ObsKind::Overnight, f64::NAN).unwrap(), 2.0);
        assert!((scaling_factor(ObsKind::Intraday, 65.0).unwrap() - 12.0).abs() < 1e-12);
        assert!(scaling_factor(ObsKind::Intraday, 0.0).is_err());
        assert!(scaling_factor(ObsKind::Intraday, -5.0).is_err());
    }

    #[test]
    fn position_openings_examples() {
        assert_eq!(position_openings(100, 100, ObsKind::Intraday, 60.0).unwrap(), 0.0);
        assert_eq!(position_openings(0, 0, ObsKind::Overnight, 0.0).unwrap(), 0.0);
        // ln(102/101) * 13
        let v = position_openings(100, 101, ObsKind::Intraday, 60.0).unwrap();
        assert!((v - 0.128_080).abs() < 5e-7, "{v}");
    }

    #[test]
    fn raw_return_examples() {
        assert_eq!(raw_return(100.0, 100.0, ObsKind::Intraday, 60.0).unwrap(), 0.0);
        let ov = raw_return(50.0, 51.0, ObsKind::Overnight, 0.0).unwrap();
        assert!((ov - 0.039_605_3).abs() < 1e-7, "{ov}");
        let id = raw_return(100.0, 101.0, ObsKind::Intraday, 60.0).unwrap();
        assert!((id - 0.129_354_3).abs() < 1e-7, "{id}");
        assert!(raw_return(0.0, 1.0, ObsKind::Overnight, 0.0).is_err());
        assert!(raw_return(1.0, -1.0, ObsKind::Overnight, 0.0).is_err());
    }

    #[test]
    fn last_trade_is_strictly_before() {
        let ticks = vec![
            Tick { at: t("2019-06-03 09:31:00"), price: 10.0 },
            Tick { at: t("2019-06-03 09:59:00"), price: 11.0 },
            Tick { at: t("2019-06-03 10:00:00"), price: 12.0 },
        ];
        assert_eq!(match_last_trade(&ticks[..2], t("2019-06-03 10:00:00")), Some(11.0));
        assert_eq!(match_last_trade(&ticks, t("2019-06-03 09:30:00")), None);
        // a tick exactly at t is excluded
        assert_eq!(match_last_trade(&ticks, t("2019-06-03 10:00:00")), Some(11.0));
    }

    #[test]
    fn day_slice() {
        let ticks = vec![
            Tick { at: t("2019-06-03 15:59:00"), price: 1.0 },
            Tick { at: t("2019-06-04 09:31:00"), price: 2.0 },
            Tick { at: t("2019-06-04 09:32:00"), price: 3.0 },
            Tick { at: t("2019-06-05 09:31:00"), price: 4.0 },
        ];
        let d = NaiveDate::from_ymd_opt(2019, 6, 4).unwrap();
        assert_eq!(day_ticks(&ticks, d).len(), 2);
        assert!(day_ticks(&ticks, NaiveDate::from_ymd_opt(2019, 6, 6).unwrap()).is_empty());
    }

    #[test]
    fn winsorize_examples() {
        let flat = vec![3.0; 50];
        assert_eq!(winsorize(&flat, 0.5, 99.5), flat);

        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        // sort-and-clamp oracle: h = 999 p
        let oracle = |p: f64| {
            let h = 999.0 * p;
            let lo = h.floor();
            xs[lo as usize] + (h - lo) * (xs[lo as usize + 1] - xs[lo as usize])
        };
        let (lo, hi) = (oracle(0.005), oracle(0.995));
        let w = winsorize(&xs, 0.5, 99.5);
        assert_eq!(w.len(), xs.len());
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((min - lo).abs() < 1e-12 && (lo - 5.995).abs() < 1e-9);
        assert!((max - hi).abs() < 1e-12);
        assert_eq!(w[500], 501.0);
    }

    proptest! {
        #[test]
        fn winsorize_stays_within_first_bounds(xs in proptest::collection::vec(-1e3f64..1e3, 1..300)) {
            let (lo, hi) = winsor_bounds(&xs, 0.5, 99.5);
            let once = winsorize(&xs, 0.5, 99.5);
            // clamping again at the same bounds is a no-op, and a second pass
            // can only tighten inside them
            let reclamped: Vec<f64> = once.iter().map(|x| x.clamp(lo, hi)).collect();
            prop_assert_eq!(&once, &reclamped);
            for x in winsorize(&once, 0.5, 99.5) {
                prop_assert!(x >= lo && x <= hi);
            }
        }

        #[test]
        fn winsorize_twice_equals_once_on_exact_ranks(
            xs in proptest::collection::vec(-1e3f64..1e3, 201..=201),
        ) {
            // (n - 1) * 0.005 = 1 and (n - 1) * 0.995 = 199: the bounds are order
            // statistics, so they survive the clamp
            let once = winsorize(&xs, 0.5, 99.5);
            prop_assert_eq!(winsorize(&once, 0.5, 99.5), once);
        }

        #[test]
        fn returns_are_price_scale_invariant(p0 in 1.0f64..500.0, p1 in 1.0f64..500.0,
                                             c in 0.01f64..100.0, mnt in 1.0f64..200.0) {
            let a = raw_return(p0, p1, ObsKind::Intraday, mnt).unwrap();
            let b = raw_return(p0 * c, p1 * c, ObsKind::Intraday, mnt).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn scaling_round_trip(p0 in 1.0f64..500.0, p1 in 1.0f64..500.0, mnt in 1.0f64..200.0) {
            let r = raw_return(p0, p1, ObsKind::Intraday, mnt).unwrap();
            let unscaled = r * mnt / (60.0 * 13.0);
            let hourly = (p1 / p0).ln();
            prop_assert!((unscaled - hourly).abs() <= 1e-12 * hourly.abs().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn ranges_by_stock() {
        let stocks = [0u32, 0, 1, 3, 3, 3];
        let r = stock_ranges(&stocks, |s| *s);
        assert_eq!(r, vec![0..2, 2..3, 3..6]);
        assert!(stock_ranges(&[] as &[u32], |s| *s).is_empty());
    }
}
