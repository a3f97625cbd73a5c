use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::columnar::{ColumnData, ColumnTable};
use crate::error::{Error, Result};
use crate::grouping::Group;

use super::{DailyObservation, DailyPanel, MarketSeries, ObsKind, Panel, PanelObservation, SecurityInfo};

pub const PANEL_SCHEMA: &str = "panel.highfreq";
pub const DAILY_SCHEMA: &str = "panel.daily";
pub const PANEL_SCHEMA_VERSION: u32 = 1;

pub(crate) fn micros(t: NaiveDateTime) -> i64 {
    t.and_utc().timestamp_micros()
}

pub(crate) fn from_micros(x: i64) -> Option<NaiveDateTime> {
    DateTime::from_timestamp_micros(x).map(|d| d.naive_utc())
}

pub(crate) fn day_number(d: NaiveDate) -> i64 {
    i64::from(chrono::Datelike::num_days_from_ce(&d))
}

pub(crate) fn from_day_number(x: i64) -> Option<NaiveDate> {
    NaiveDate::from_num_days_from_ce_opt(i32::try_from(x).ok()?)
}

fn group_code(g: Option<Group>) -> u32 {
    g.map_or(0, |g| g.index() as u32 + 1)
}

fn group_from_code(c: u32) -> Option<Group> {
    c.checked_sub(1).and_then(|i| Group::from_index(i as usize))
}

macro_rules! take_col {
    ($table:expr, $name:expr, $variant:ident, $path:expr) => {
        match $table.take($name, $path)? {
            ColumnData::$variant(v) => v,
            _ => return Err(Error::format($path, format!("column `{}` has the wrong type", $name))),
        }
    };
}

/// Writes the high-frequency panel and its aligned market series.
pub fn write_panel(panel: &Panel, market: &MarketSeries, path: &Path) -> Result<()> {
    let r = &panel.rows;
    let mut t = ColumnTable::new(PANEL_SCHEMA, PANEL_SCHEMA_VERSION);
    t.push("stock", ColumnData::U32(r.iter().map(|x| x.stock).collect()))
        .push("day", ColumnData::I64(r.iter().map(|x| day_number(x.day)).collect()))
        .push("seq", ColumnData::U32(r.iter().map(|x| x.seq).collect()))
        .push("t_prev", ColumnData::I64(r.iter().map(|x| micros(x.t_prev)).collect()))
        .push("t_curr", ColumnData::I64(r.iter().map(|x| micros(x.t_curr)).collect()))
        .push("kind", ColumnData::U32(r.iter().map(|x| x.kind.code()).collect()))
        .push("mnt", ColumnData::F64(r.iter().map(|x| x.mnt).collect()))
        .push("n_prev", ColumnData::I64(r.iter().map(|x| x.n_prev as i64).collect()))
        .push("n_curr", ColumnData::I64(r.iter().map(|x| x.n_curr as i64).collect()))
        .push("p_prev", ColumnData::F64(r.iter().map(|x| x.p_prev).collect()))
        .push("p_curr", ColumnData::F64(r.iter().map(|x| x.p_curr).collect()))
        .push("delta_n", ColumnData::F64(r.iter().map(|x| x.delta_n).collect()))
        .push("delta_n_detrended", ColumnData::F64(r.iter().map(|x| x.delta_n_detrended).collect()))
        .push("raw_return", ColumnData::F64(r.iter().map(|x| x.raw_return).collect()))
        .push("std_return", ColumnData::F64(r.iter().map(|x| x.std_return).collect()))
        .push("group", ColumnData::U32(r.iter().map(|x| group_code(x.group)).collect()))
        .push("market_p_prev", ColumnData::F64(market.p_prev.clone()))
        .push("market_p_curr", ColumnData::F64(market.p_curr.clone()))
        .push("market_raw", ColumnData::F64(market.raw.clone()))
        .push("market_std", ColumnData::F64(market.std.clone()));
    t.write_file(path)
}

/// Reads a panel written by [`write_panel`]; `securities` comes from the
/// run's security file.
pub fn read_panel(path: &Path, securities: Vec<SecurityInfo>) -> Result<(Panel, MarketSeries)> {
    let mut t = ColumnTable::read_file(path)?;
    t.expect_schema(PANEL_SCHEMA, PANEL_SCHEMA_VERSION, path)?;
    let stock = take_col!(t, "stock", U32, path);
    let day = take_col!(t, "day", I64, path);
    let seq = take_col!(t, "seq", U32, path);
    let t_prev = take_col!(t, "t_prev", I64, path);
    let t_curr = take_col!(t, "t_curr", I64, path);
    let kind = take_col!(t, "kind", U32, path);
    let mnt = take_col!(t, "mnt", F64, path);
    let n_prev = take_col!(t, "n_prev", I64, path);
    let n_curr = take_col!(t, "n_curr", I64, path);
    let p_prev = take_col!(t, "p_prev", F64, path);
    let p_curr = take_col!(t, "p_curr", F64, path);
    let delta_n = take_col!(t, "delta_n", F64, path);
    let delta_n_detrended = take_col!(t, "delta_n_detrended", F64, path);
    let raw_return = take_col!(t, "raw_return", F64, path);
    let std_return = take_col!(t, "std_return", F64, path);
    let group = take_col!(t, "group", U32, path);
    let market = MarketSeries {
        p_prev: take_col!(t, "market_p_prev", F64, path),
        p_curr: take_col!(t, "market_p_curr", F64, path),
        raw: take_col!(t, "market_raw", F64, path),
        std: take_col!(t, "market_std", F64, path),
    };
    let bad = |what: &str, i: usize| Error::format(path, format!("row {i}: invalid {what}"));
    let rows = (0..stock.len())
        .map(|i| {
            Ok(PanelObservation {
                stock: stock[i],
                day: from_day_number(day[i]).ok_or_else(|| bad("day", i))?,
                seq: seq[i],
                t_prev: from_micros(t_prev[i]).ok_or_else(|| bad("t_prev", i))?,
                t_curr: from_micros(t_curr[i]).ok_or_else(|| bad("t_curr", i))?,
                kind: ObsKind::from_code(kind[i]).ok_or_else(|| bad("kind", i))?,
                mnt: mnt[i],
                n_prev: n_prev[i] as u64,
                n_curr: n_curr[i] as u64,
                p_prev: p_prev[i],
                p_curr: p_curr[i],
                delta_n: delta_n[i],
                delta_n_detrended: delta_n_detrended[i],
                raw_return: raw_return[i],
                std_return: std_return[i],
                group: group_from_code(group[i]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.iter().any(|r| r.stock as usize >= securities.len()) {
        return Err(Error::format(path, "stock index outside the security table"));
    }
    Ok((Panel { securities, rows }, market))
}

fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Delimited-text export of the same columns, tickers spelled out.
pub fn write_panel_csv(panel: &Panel, market: &MarketSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "ticker", "day", "seq", "t_prev", "t_curr", "kind", "mnt", "n_prev", "n_curr", "p_prev", "p_curr",
        "delta_n", "delta_n_detrended", "raw_return", "std_return", "group", "market_raw", "market_std",
    ])?;
    for (i, r) in panel.rows.iter().enumerate() {
        w.write_record([
            panel.securities[r.stock as usize].ticker.clone(),
            r.day.to_string(),
            r.seq.to_string(),
            r.t_prev.format("%Y-%m-%dT%H:%M:%S%.6f").to_string(),
            r.t_curr.format("%Y-%m-%dT%H:%M:%S%.6f").to_string(),
            r.kind.label().to_string(),
            fmt_f(r.mnt),
            r.n_prev.to_string(),
            r.n_curr.to_string(),
            fmt_f(r.p_prev),
            fmt_f(r.p_curr),
            fmt_f(r.delta_n),
            fmt_f(r.delta_n_detrended),
            fmt_f(r.raw_return),
            fmt_f(r.std_return),
            r.group.map_or(String::new(), |g| g.name().to_string()),
            fmt_f(market.raw[i]),
            fmt_f(market.std[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_daily_panel(panel: &DailyPanel, market: &MarketSeries, path: &Path) -> Result<()> {
    let r = &panel.rows;
    let mut t = ColumnTable::new(DAILY_SCHEMA, PANEL_SCHEMA_VERSION);
    t.push("stock", ColumnData::U32(r.iter().map(|x| x.stock).collect()))
        .push("day", ColumnData::I64(r.iter().map(|x| day_number(x.day)).collect()))
        .push("seq", ColumnData::U32(r.iter().map(|x| x.seq).collect()))
        .push("t_close", ColumnData::I64(r.iter().map(|x| micros(x.t_close)).collect()))
        .push("n_prev_close", ColumnData::I64(r.iter().map(|x| x.n_prev_close as i64).collect()))
        .push("n_close", ColumnData::I64(r.iter().map(|x| x.n_close as i64).collect()))
        .push("p_prev_close", ColumnData::F64(r.iter().map(|x| x.p_prev_close).collect()))
        .push("p_close", ColumnData::F64(r.iter().map(|x| x.p_close).collect()))
        .push("delta_n_daily", ColumnData::F64(r.iter().map(|x| x.delta_n_daily).collect()))
        .push("raw_return_daily", ColumnData::F64(r.iter().map(|x| x.raw_return_daily).collect()))
        .push("std_return_daily", ColumnData::F64(r.iter().map(|x| x.std_return_daily).collect()))
        .push("group", ColumnData::U32(r.iter().map(|x| group_code(x.group)).collect()))
        .push("market_p_prev", ColumnData::F64(market.p_prev.clone()))
        .push("market_p_curr", ColumnData::F64(market.p_curr.clone()))
        .push("market_raw", ColumnData::F64(market.raw.clone()))
        .push("market_std", ColumnData::F64(market.std.clone()));
    t.write_file(path)
}

pub fn read_daily_panel(path: &Path, securities: Vec<SecurityInfo>) -> Result<(DailyPanel, MarketSeries)> {
    let mut t = ColumnTable::read_file(path)?;
    t.expect_schema(DAILY_SCHEMA, PANEL_SCHEMA_VERSION, path)?;
    let stock = take_col!(t, "stock", U32, path);
    let day = take_col!(t, "day", I64, path);
    let seq = take_col!(t, "seq", U32, path);
    let t_close = take_col!(t, "t_close", I64, path);
    let n_prev_close = take_col!(t, "n_prev_close", I64, path);
    let n_close = take_col!(t, "n_close", I64, path);
    let p_prev_close = take_col!(t, "p_prev_close", F64, path);
    let p_close = take_col!(t, "p_close", F64, path);
    let delta = take_col!(t, "delta_n_daily", F64, path);
    let raw = take_col!(t, "raw_return_daily", F64, path);
    let std = take_col!(t, "std_return_daily", F64, path);
    let group = take_col!(t, "group", U32, path);
    let market = MarketSeries {
        p_prev: take_col!(t, "market_p_prev", F64, path),
        p_curr: take_col!(t, "market_p_curr", F64, path),
        raw: take_col!(t, "market_raw", F64, path),
        std: take_col!(t, "market_std", F64, path),
    };
    let bad = |what: &str, i: usize| Error::format(path, format!("row {i}: invalid {what}"));
    let rows = (0..stock.len())
        .map(|i| {
            Ok(DailyObservation {
                stock: stock[i],
                day: from_day_number(day[i]).ok_or_else(|| bad("day", i))?,
                seq: seq[i],
                t_close: from_micros(t_close[i]).ok_or_else(|| bad("t_close", i))?,
                n_prev_close: n_prev_close[i] as u64,
                n_close: n_close[i] as u64,
                p_prev_close: p_prev_close[i],
                p_close: p_close[i],
                delta_n_daily: delta[i],
                raw_return_daily: raw[i],
                std_return_daily: std[i],
                group: group_from_code(group[i]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((DailyPanel { securities, rows }, market))
}
