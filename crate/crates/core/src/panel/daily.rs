use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::ingest::CleanData;

use super::{
    day_ticks, match_last_trade, position_openings, raw_return, security_infos, winsorize, MarketSeries,
    ObsKind, SecurityInfo,
};

/// Close-to-close row of the daily-frequency panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyObservation {
    pub stock: u32,
    pub day: NaiveDate,
    pub seq: u32,
    /// Time of the last observation before the close.
    pub t_close: NaiveDateTime,
    pub n_prev_close: u64,
    pub n_close: u64,
    pub p_prev_close: f64,
    pub p_close: f64,
    /// Winsorized `log((n_close + 1) / (n_prev_close + 1))`.
    pub delta_n_daily: f64,
    pub raw_return_daily: f64,
    pub std_return_daily: f64,
    pub group: Option<Group>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DailyPanel {
    pub securities: Vec<SecurityInfo>,
    pub rows: Vec<DailyObservation>,
}

impl DailyPanel {
    pub fn stock_ranges(&self) -> Vec<std::ops::Range<usize>> {
        super::stock_ranges(&self.rows, |r| r.stock)
    }
}

struct Close {
    at: NaiveDateTime,
    holders: u64,
    price: f64,
    market: f64,
}

/// Builds close-to-close rows from the last matched observation of each day.
/// The first day of every stock yields no row.
pub fn build_daily_panel(clean: &CleanData, cfg: &PipelineConfig) -> Result<(DailyPanel, MarketSeries)> {
    let securities = security_infos(clean);
    let empty = Vec::new();
    let market_ticks = clean.ticks.get(&clean.market_ticker).unwrap_or(&empty);

    let per_stock: Vec<Result<(Vec<DailyObservation>, Vec<(f64, f64)>)>> = clean
        .series
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(stock, (ticker, obs))| {
            let ticks = clean.ticks.get(ticker).unwrap_or(&empty);
            let mut closes: Vec<Close> = Vec::new();
            for o in obs {
                let date = o.at.date();
                let (Some(price), Some(market)) = (
                    match_last_trade(day_ticks(ticks, date), o.at),
                    match_last_trade(day_ticks(market_ticks, date), o.at),
                ) else {
                    continue;
                };
                let close = Close { at: o.at, holders: o.holders, price, market };
                match closes.last_mut() {
                    Some(last) if last.at.date() == date => *last = close,
                    _ => closes.push(close),
                }
            }
            let mut rows = Vec::with_capacity(closes.len().saturating_sub(1));
            let mut mkt = Vec::with_capacity(rows.capacity());
            for (k, pair) in closes.windows(2).enumerate() {
                let (a, b) = (&pair[0], &pair[1]);
                rows.push(DailyObservation {
                    stock: stock as u32,
                    day: b.at.date(),
                    seq: k as u32,
                    t_close: b.at,
                    n_prev_close: a.holders,
                    n_close: b.holders,
                    p_prev_close: a.price,
                    p_close: b.price,
                    delta_n_daily: position_openings(a.holders, b.holders, ObsKind::Daily, 0.0)?,
                    raw_return_daily: raw_return(a.price, b.price, ObsKind::Daily, 0.0)?,
                    std_return_daily: f64::NAN,
                    group: None,
                });
                mkt.push((a.market, b.market));
            }
            Ok((rows, mkt))
        })
        .collect();

    let mut rows = Vec::new();
    let mut market = MarketSeries::default();
    for res in per_stock {
        let (r, m) = res?;
        for (mp, mc) in m {
            market.p_prev.push(mp);
            market.p_curr.push(mc);
            market.raw.push(raw_return(mp, mc, ObsKind::Daily, 0.0)?);
        }
        rows.extend(r);
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("daily panel has no rows".into()));
    }
    market.std = vec![f64::NAN; market.raw.len()];
    let dn: Vec<f64> = rows.iter().map(|r| r.delta_n_daily).collect();
    for (row, w) in rows.iter_mut().zip(winsorize(&dn, cfg.winsor_lower_pct, cfg.winsor_upper_pct)) {
        row.delta_n_daily = w;
    }
    Ok((DailyPanel { securities, rows }, market))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn close_change_uses_plus_one_guard() {
        let v = position_openings(200, 202, ObsKind::Daily, 0.0).unwrap();
        assert!((v - (203.0f64 / 201.0).ln()).abs() < 1e-15);
        assert!((v - 0.009_901).abs() < 5e-7);
        assert_eq!(position_openings(350, 350, ObsKind::Daily, 0.0).unwrap(), 0.0);
    }
}
