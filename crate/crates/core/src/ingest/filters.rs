use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;

use crate::calendar::{session_open, TradingCalendar};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::panel::{day_ticks, match_last_trade};
use crate::volatility::{fit_gjr_garch, stock_day_rv};

use super::{
    dedupe_hourly, CleanData, Exclusion, FilterLedger, LedgerStep, Observation, SecurityMeta, Snapshot, Tick,
    TradeTick, VenueTable,
};

/// Session-hour, split-adjusted ticks per ticker, sorted by time.
pub type TickMap = BTreeMap<String, Vec<Tick>>;

pub const FILTER_STEPS: [&str; 12] = [
    "Original dataset",
    "Sample window (drop warm-up month)",
    "Regular trading hours",
    "Ticker matched to metadata and trades",
    "Common stocks (share code 10 or 11)",
    "Single share class",
    "One observation per hour",
    "Complete trading days",
    "No gap longer than the maximum",
    "Price matchable",
    "Volatility estimable",
    "Non-constant holders and manual exclusions",
];

type Series = BTreeMap<String, Vec<Observation>>;

/// Drops ticks off the retained venues or outside [open, close] of a trading
/// day, divides pre-split prices by the split ratio, and sorts each ticker.
pub fn prepare_ticks(
    ticks: Vec<TradeTick>,
    meta: &BTreeMap<String, SecurityMeta>,
    venues: &VenueTable,
    cal: &TradingCalendar,
) -> TickMap {
    let mut out: TickMap = BTreeMap::new();
    for t in ticks {
        let date = t.traded_at.date();
        if !venues.is_retained(&t.exchange) || !cal.is_trading_day(date) {
            continue;
        }
        let time = t.traded_at.time();
        if time < session_open() || time > cal.close_time(date) {
            continue;
        }
        let mut price = t.price;
        if let Some(m) = meta.get(&t.ticker) {
            for &(eff, ratio) in &m.split_events {
                if date < eff {
                    price /= ratio;
                }
            }
        }
        out.entry(t.ticker).or_default().push(Tick { at: t.traded_at, price });
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.at.cmp(&b.at));
    }
    out
}

fn count(series: &Series) -> (usize, usize) {
    (series.values().map(Vec::len).sum(), series.values().filter(|v| !v.is_empty()).count())
}

fn retain_obs(series: &mut Series, mut keep: impl FnMut(&str, &Observation) -> bool) {
    for (t, v) in series.iter_mut() {
        v.retain(|o| keep(t, o));
    }
    series.retain(|_, v| !v.is_empty());
}

/// Days with at least `min_points` observations, pro-rated on early closes.
fn complete_days(obs: Vec<Observation>, min_points: usize, cal: &TradingCalendar) -> Vec<Observation> {
    let mut per_day: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for o in &obs {
        *per_day.entry(o.at.date()).or_default() += 1;
    }
    obs.into_iter()
        .filter(|o| {
            let d = o.at.date();
            let need = (min_points as f64 * cal.session_minutes(d) as f64 / 390.0).ceil() as usize;
            per_day[&d] >= need
        })
        .collect()
}

fn has_long_gap(obs: &[Observation], max_gap: usize, cal: &TradingCalendar) -> bool {
    let days: BTreeSet<NaiveDate> = obs.iter().map(|o| o.at.date()).collect();
    let days: Vec<NaiveDate> = days.into_iter().collect();
    days.windows(2).any(|w| cal.trading_days_between(w[0], w[1]) > max_gap)
}

fn completeness_and_continuity(obs: Vec<Observation>, cfg: &PipelineConfig, cal: &TradingCalendar) -> Vec<Observation> {
    let obs = complete_days(obs, cfg.min_points_per_day, cal);
    if has_long_gap(&obs, cfg.max_gap_trading_days, cal) {
        Vec::new()
    } else {
        obs
    }
}

/// Unscaled overnight log returns of the stock and of the market, from the last
/// observation of each day to the first of the next.
fn overnight_returns(obs: &[Observation], ticks: &[Tick], market: &[Tick]) -> (Vec<f64>, Vec<f64>) {
    let price = |ts: &[Tick], o: &Observation| match_last_trade(day_ticks(ts, o.at.date()), o.at);
    let mut rs = Vec::new();
    let mut rm = Vec::new();
    for w in obs.windows(2) {
        if w[0].at.date() == w[1].at.date() {
            continue;
        }
        if let (Some(a), Some(b), Some(ma), Some(mb)) =
            (price(ticks, &w[0]), price(ticks, &w[1]), price(market, &w[0]), price(market, &w[1]))
        {
            rs.push((b / a).ln());
            rm.push((mb / ma).ln());
        }
    }
    (rs, rm)
}

/// Runs the twelve cleaning steps, recording survivors after each.
///
/// Ticks must come from [`prepare_ticks`]. The market proxy's ticks must be
/// present under `cfg.market_ticker`.
pub fn apply_filters(
    snapshots: Vec<Snapshot>,
    ticks: &TickMap,
    meta: &BTreeMap<String, SecurityMeta>,
    cfg: &PipelineConfig,
    cal: &TradingCalendar,
    exclusions: &[Exclusion],
) -> Result<(CleanData, FilterLedger)> {
    cfg.validate()?;
    let mut ledger = FilterLedger::default();
    let mut first_empty: Option<usize> = None;
    let mut record = |step: usize, series: &Series, ledger: &mut FilterLedger| {
        let (observations, securities) = count(series);
        if observations == 0 && first_empty.is_none() {
            first_empty = Some(step);
        }
        ledger.steps.push(LedgerStep { step, name: FILTER_STEPS[step - 1].to_string(), observations, securities });
    };

    let mut series: Series = BTreeMap::new();
    for s in snapshots {
        series.entry(s.ticker).or_default().push(Observation { at: s.at, holders: s.holders });
    }
    for v in series.values_mut() {
        v.sort_by(|a, b| a.at.cmp(&b.at));
    }
    record(1, &series, &mut ledger);

    retain_obs(&mut series, |_, o| {
        let d = o.at.date();
        d >= cfg.sample_start && cfg.sample_end.is_none_or(|e| d <= e)
    });
    record(2, &series, &mut ledger);

    retain_obs(&mut series, |_, o| {
        let d = o.at.date();
        cal.is_trading_day(d) && o.at.time() >= session_open() && o.at.time() < cal.close_time(d)
    });
    record(3, &series, &mut ledger);

    series.retain(|t, _| meta.contains_key(t) && ticks.get(t).is_some_and(|v| !v.is_empty()));
    record(4, &series, &mut ledger);

    series.retain(|t, _| matches!(meta[t].share_code, 10 | 11));
    record(5, &series, &mut ledger);

    series.retain(|t, _| !meta[t].dual_class);
    record(6, &series, &mut ledger);

    let eps = Duration::minutes(cfg.near_hour_epsilon_minutes);
    for v in series.values_mut() {
        *v = dedupe_hourly(v, eps);
    }
    record(7, &series, &mut ledger);

    for v in series.values_mut() {
        *v = complete_days(std::mem::take(v), cfg.min_points_per_day, cal);
    }
    series.retain(|_, v| !v.is_empty());
    record(8, &series, &mut ledger);

    series.retain(|_, v| !has_long_gap(v, cfg.max_gap_trading_days, cal));
    record(9, &series, &mut ledger);

    let empty = Vec::new();
    let market = ticks.get(&cfg.market_ticker).unwrap_or(&empty);
    let par_map = |series: Series, f: &(dyn Fn(&str, Vec<Observation>) -> Vec<Observation> + Sync)| -> Series {
        series
            .into_par_iter()
            .map(|(t, v)| {
                let v = f(&t, v);
                (t, v)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .collect()
    };

    series = par_map(series, &|t, v| {
        let own = ticks.get(t).unwrap_or(&empty);
        let v: Vec<Observation> = v
            .into_iter()
            .filter(|o| {
                let d = o.at.date();
                match_last_trade(day_ticks(own, d), o.at).is_some()
                    && match_last_trade(day_ticks(market, d), o.at).is_some()
            })
            .collect();
        completeness_and_continuity(v, cfg, cal)
    });
    record(10, &series, &mut ledger);

    let days: BTreeSet<NaiveDate> = series.values().flatten().map(|o| o.at.date()).collect();
    let market_ok: BTreeMap<NaiveDate, bool> = days
        .into_par_iter()
        .map(|d| (d, stock_day_rv(market, d, cal).is_ok_and(|r| r.sigma > 0.0)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    series = par_map(series, &|t, v| {
        let own = ticks.get(t).unwrap_or(&empty);
        let mut day_ok: BTreeMap<NaiveDate, bool> = BTreeMap::new();
        let v: Vec<Observation> = v
            .into_iter()
            .filter(|o| {
                let d = o.at.date();
                *day_ok
                    .entry(d)
                    .or_insert_with(|| market_ok[&d] && stock_day_rv(own, d, cal).is_ok_and(|r| r.sigma > 0.0))
            })
            .collect();
        let v = completeness_and_continuity(v, cfg, cal);
        let (rs, rm) = overnight_returns(&v, own, market);
        if rs.len() < cfg.min_volatility_obs || fit_gjr_garch(&rs).is_err() || fit_gjr_garch(&rm).is_err() {
            return Vec::new();
        }
        v
    });
    record(11, &series, &mut ledger);

    for x in exclusions {
        if let Some(v) = series.get_mut(&x.ticker) {
            v.retain(|o| x.keeps(o.at.date()));
        }
    }
    series.retain(|_, v| !v.is_empty() && v.iter().any(|o| o.holders != v[0].holders));
    record(12, &series, &mut ledger);

    if let Some(step) = first_empty {
        return Err(Error::EmptyPanel { step, name: FILTER_STEPS[step - 1].to_string() });
    }

    let mut kept_ticks: TickMap = series
        .keys()
        .filter_map(|t| ticks.get(t).map(|v| (t.clone(), v.clone())))
        .collect();
    kept_ticks.insert(cfg.market_ticker.clone(), market.clone());
    let kept_meta = series.keys().map(|t| (t.clone(), meta[t].clone())).collect();
    Ok((
        CleanData { series, ticks: kept_ticks, meta: kept_meta, market_ticker: cfg.market_ticker.clone() },
        ledger,
    ))
}
