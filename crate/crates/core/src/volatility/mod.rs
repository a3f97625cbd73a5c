//! Full-day volatility estimates and standardized returns: subsampled realized
//! volatility for intraday rows, GJR-GARCH(1,1) for overnight and daily rows.

mod gjr;
mod optim;
mod rv;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{session_open, TradingCalendar};
use crate::error::{Error, Result};
use crate::ingest::{Tick, TickMap};
use crate::panel::{day_ticks, DailyPanel, MarketSeries, ObsKind, Panel};

pub use gjr::{
    fit_gjr_constrained, fit_gjr_garch, gjr_loglik, gjr_sigma_series, gjr_variance_path, plain, simulate_gjr,
    start_loglik, GjrParams, ModelKind, MIN_GJR_OBS,
};
pub use optim::{minimize, BfgsOptions, BfgsResult};
pub use rv::{
    grid_realized_variance, offset_variances, realized_vol_subsampled, RvDay, GRID_OFFSETS, GRID_SPACING_MINUTES,
};

/// `raw_return / sigma`; a zero or non-finite sigma makes the observation inestimable.
pub fn standardize(raw_return: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("inestimable volatility {sigma}")));
    }
    Ok(raw_return / sigma)
}

pub fn session_bounds(cal: &TradingCalendar, date: NaiveDate) -> (NaiveDateTime, NaiveDateTime) {
    (date.and_time(session_open()), date.and_time(cal.close_time(date)))
}

/// Realized volatility of one stock-day from the stock's full tick series.
pub fn stock_day_rv(ticks: &[Tick], date: NaiveDate, cal: &TradingCalendar) -> Result<RvDay> {
    let (open, close) = session_bounds(cal, date);
    realized_vol_subsampled(day_ticks(ticks, date), open, close)
}

/// Audit row of one volatility estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolRecord {
    pub ticker: String,
    pub day: NaiveDate,
    pub kind: String,
    pub sigma: f64,
    pub model_kind: String,
    pub converged: bool,
}

/// Variance-model fits of one stock and of the market on that stock's timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockFits {
    pub stock: GjrParams,
    pub market: GjrParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VolatilityOutput {
    pub records: Vec<VolRecord>,
    pub fits: BTreeMap<String, StockFits>,
    /// Rows removed because a volatility was zero or could not be estimated.
    pub dropped_rows: usize,
    pub failed_fits: Vec<String>,
}

struct StockVol {
    stock_std: Vec<f64>,
    market_std: Vec<f64>,
    records: Vec<VolRecord>,
    fits: Option<StockFits>,
    failed: Option<String>,
}

fn fit_pair(stock: &[f64], market: &[f64]) -> Result<StockFits> {
    Ok(StockFits { stock: fit_gjr_garch(stock)?, market: fit_gjr_garch(market)? })
}

fn log_ratio(p0: f64, p1: f64) -> f64 {
    (p1 / p0).ln()
}

/// Standardizes every panel row in place and drops inestimable ones.
///
/// Intraday rows use the realized volatility of the row's day for the stock
/// and for the market; overnight rows use the in-sample conditional volatility
/// of a fit on the stock's (and the market's, at the stock's timestamps)
/// unscaled overnight returns, aligned to each return's own index.
pub fn standardize_panel(
    panel: &mut Panel,
    market: &mut MarketSeries,
    ticks: &TickMap,
    market_ticker: &str,
    cal: &TradingCalendar,
) -> Result<VolatilityOutput> {
    if market.len() != panel.rows.len() {
        return Err(Error::Domain("market series is not aligned with the panel".into()));
    }
    let empty = Vec::new();
    let market_ticks = ticks.get(market_ticker).unwrap_or(&empty);
    let mut days: Vec<NaiveDate> = panel
        .rows
        .iter()
        .filter(|r| r.kind == ObsKind::Intraday)
        .map(|r| r.day)
        .collect();
    days.sort_unstable();
    days.dedup();
    let market_rv: BTreeMap<NaiveDate, f64> = days
        .par_iter()
        .map(|&d| (d, stock_day_rv(market_ticks, d, cal).map_or(f64::NAN, |r| r.sigma)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let rows = &panel.rows;
    let securities = &panel.securities;
    let mkt = &*market;
    let per_stock: Vec<StockVol> = panel
        .stock_ranges()
        .into_par_iter()
        .map(|range| {
            let start = range.start;
            let rows = &rows[range];
            let ticker = &securities[rows[0].stock as usize].ticker;
            let stock_ticks = ticks.get(ticker).unwrap_or(&empty);
            let mut sigma_s = vec![f64::NAN; rows.len()];
            let mut sigma_m = vec![f64::NAN; rows.len()];
            let mut records = Vec::new();

            let mut rv_cache: BTreeMap<NaiveDate, f64> = BTreeMap::new();
            for (i, r) in rows.iter().enumerate() {
                if r.kind != ObsKind::Intraday {
                    continue;
                }
                let s = *rv_cache.entry(r.day).or_insert_with(|| {
                    let s = stock_day_rv(stock_ticks, r.day, cal).map_or(f64::NAN, |v| v.sigma);
                    records.push(VolRecord {
                        ticker: ticker.clone(),
                        day: r.day,
                        kind: ObsKind::Intraday.label().to_string(),
                        sigma: s,
                        model_kind: "rv".to_string(),
                        converged: true,
                    });
                    s
                });
                sigma_s[i] = s;
                sigma_m[i] = market_rv.get(&r.day).copied().unwrap_or(f64::NAN);
            }

            let ov: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].kind == ObsKind::Overnight).collect();
            let rs: Vec<f64> = ov.iter().map(|&i| log_ratio(rows[i].p_prev, rows[i].p_curr)).collect();
            let rm: Vec<f64> = ov
                .iter()
                .map(|&i| log_ratio(mkt.p_prev[start + i], mkt.p_curr[start + i]))
                .collect();
            let (fits, failed) = match fit_pair(&rs, &rm) {
                Ok(f) => {
                    let ss = gjr_sigma_series(&f.stock, &rs, ObsKind::Overnight).unwrap_or_default();
                    let sm = gjr_sigma_series(&f.market, &rm, ObsKind::Overnight).unwrap_or_default();
                    for (k, &i) in ov.iter().enumerate() {
                        sigma_s[i] = ss[k];
                        sigma_m[i] = sm[k];
                        records.push(VolRecord {
                            ticker: ticker.clone(),
                            day: rows[i].day,
                            kind: ObsKind::Overnight.label().to_string(),
                            sigma: ss[k],
                            model_kind: f.stock.model_kind.label().to_string(),
                            converged: f.stock.converged,
                        });
                    }
                    (Some(f), None)
                }
                Err(e) => (None, Some(format!("{ticker}: {e}"))),
            };
            records.sort_by(|a, b| (a.day, &a.kind).cmp(&(b.day, &b.kind)));
            let stock_std = rows
                .iter()
                .zip(&sigma_s)
                .map(|(r, &s)| standardize(r.raw_return, s).unwrap_or(f64::NAN))
                .collect();
            let market_std = (0..rows.len())
                .map(|i| standardize(mkt.raw[start + i], sigma_m[i]).unwrap_or(f64::NAN))
                .collect();
            StockVol { stock_std, market_std, records, fits, failed }
        })
        .collect();

    let mut out = VolatilityOutput::default();
    let mut keep = Vec::with_capacity(panel.rows.len());
    let mut idx = 0;
    for sv in per_stock {
        let ticker = panel.securities[panel.rows[idx].stock as usize].ticker.clone();
        for (s, m) in sv.stock_std.into_iter().zip(sv.market_std) {
            panel.rows[idx].std_return = s;
            market.std[idx] = m;
            keep.push(s.is_finite() && m.is_finite());
            idx += 1;
        }
        out.records.extend(sv.records);
        if let Some(f) = sv.fits {
            out.fits.insert(ticker, f);
        }
        out.failed_fits.extend(sv.failed);
    }
    apply_keep(&mut panel.rows, market, &keep);
    out.dropped_rows = keep.iter().filter(|k| !**k).count();
    Ok(out)
}

fn apply_keep<T>(rows: &mut Vec<T>, market: &mut MarketSeries, keep: &[bool]) {
    let mut it = keep.iter();
    rows.retain(|_| *it.next().unwrap_or(&false));
    market.retain_mask(keep);
}

/// Daily variant: close-to-close returns standardized by a variance-model fit on
/// the stock's (and the market's) daily returns, without session scaling.
pub fn standardize_daily_panel(panel: &mut DailyPanel, market: &mut MarketSeries) -> Result<VolatilityOutput> {
    if market.len() != panel.rows.len() {
        return Err(Error::Domain("market series is not aligned with the daily panel".into()));
    }
    let rows = &panel.rows;
    let securities = &panel.securities;
    let mkt = &*market;
    let per_stock: Vec<StockVol> = panel
        .stock_ranges()
        .into_par_iter()
        .map(|range| {
            let start = range.start;
            let rows = &rows[range.clone()];
            let ticker = &securities[rows[0].stock as usize].ticker;
            let rs: Vec<f64> = rows.iter().map(|r| r.raw_return_daily).collect();
            let rm: Vec<f64> = mkt.raw[range].to_vec();
            let mut records = Vec::new();
            match fit_pair(&rs, &rm) {
                Ok(f) => {
                    let ss = gjr_sigma_series(&f.stock, &rs, ObsKind::Daily).unwrap_or_default();
                    let sm = gjr_sigma_series(&f.market, &rm, ObsKind::Daily).unwrap_or_default();
                    for (r, &s) in rows.iter().zip(&ss) {
                        records.push(VolRecord {
                            ticker: ticker.clone(),
                            day: r.day,
                            kind: ObsKind::Daily.label().to_string(),
                            sigma: s,
                            model_kind: f.stock.model_kind.label().to_string(),
                            converged: f.stock.converged,
                        });
                    }
                    StockVol {
                        stock_std: rs.iter().zip(&ss).map(|(r, s)| standardize(*r, *s).unwrap_or(f64::NAN)).collect(),
                        market_std: rm.iter().zip(&sm).map(|(r, s)| standardize(*r, *s).unwrap_or(f64::NAN)).collect(),
                        records,
                        fits: Some(f),
                        failed: None,
                    }
                }
                Err(e) => StockVol {
                    stock_std: vec![f64::NAN; rows.len()],
                    market_std: vec![f64::NAN; rows.len()],
                    records,
                    fits: None,
                    failed: Some(format!("{ticker}: {e} (from row {start})")),
                },
            }
        })
        .collect();

    let mut out = VolatilityOutput::default();
    let mut keep = Vec::with_capacity(panel.rows.len());
    let mut idx = 0;
    for sv in per_stock {
        let ticker = panel.securities[panel.rows[idx].stock as usize].ticker.clone();
        for (s, m) in sv.stock_std.into_iter().zip(sv.market_std) {
            panel.rows[idx].std_return_daily = s;
            market.std[idx] = m;
            keep.push(s.is_finite() && m.is_finite());
            idx += 1;
        }
        out.records.extend(sv.records);
        if let Some(f) = sv.fits {
            out.fits.insert(ticker, f);
        }
        out.failed_fits.extend(sv.failed);
    }
    apply_keep(&mut panel.rows, market, &keep);
    out.dropped_rows = keep.iter().filter(|k| !**k).count();
    Ok(out)
}

/// Writes the audit rows as delimited text.
pub fn write_vol_records(records: &[VolRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(0.05, 0.025).unwrap(), 2.0);
        assert_eq!(standardize(0.0, 0.3).unwrap(), 0.0);
        assert!(standardize(0.1, 0.0).is_err());
        assert!(standardize(0.1, f64::NAN).is_err());
    }
}
