use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::columnar::{ColumnData, ColumnTable};
use crate::error::{Error, Result};
use crate::panel::io::{from_micros, micros};

use super::{
    CleanData, Exclusion, ExclusionAction, FilterLedger, Observation, RawSnapshot, Rejection, SecurityMeta, Sector,
    Tick, TradeTick, VenueTable,
};

pub const CLEAN_SERIES_FILE: &str = "clean_series.rfc";
pub const CLEAN_TICKS_FILE: &str = "clean_ticks.rfc";
pub const SECURITIES_FILE: &str = "securities.json";
const SERIES_SCHEMA: &str = "ingest.series";
const TICKS_SCHEMA: &str = "ingest.ticks";
const SCHEMA_VERSION: u32 = 1;

const NAIVE_FORMATS: [&str; 2] = ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"];

/// Parses a retrieval time. Accepts RFC 3339 with any offset, or a naive
/// `YYYY-MM-DD HH:MM:SS[.ffffff]` (optionally suffixed ` UTC`) taken as UTC.
pub fn parse_utc_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    if let Ok(t) = DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f%:z") {
        return Some(t.with_timezone(&Utc));
    }
    let s = s.strip_suffix(" UTC").unwrap_or(s);
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| n.and_utc())
}

/// Parses a trade time, New York local, microsecond precision.
pub fn parse_tick_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NAIVE_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::format(path, format!("missing column `{name}`")))
}

fn open(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(f))
}

fn resolve<'a>(aliases: &'a BTreeMap<String, String>, ticker: &'a str) -> &'a str {
    aliases.get(ticker).map_or(ticker, String::as_str)
}

/// Loads `ticker,timestamp,users_holding`; unusable records are returned as
/// rejections rather than failing the load.
pub fn read_snapshots(path: &Path, aliases: &BTreeMap<String, String>) -> Result<(Vec<RawSnapshot>, Vec<Rejection>)> {
    let mut rdr = open(path)?;
    let h = rdr.headers()?.clone();
    let (it, its, ih) = (
        column_index(&h, "ticker", path)?,
        column_index(&h, "timestamp", path)?,
        column_index(&h, "users_holding", path)?,
    );
    let source = path.display().to_string();
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let reject = |reason: String| Rejection { source: source.clone(), line, reason };
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejected.push(reject(e.to_string()));
                continue;
            }
        };
        let ticker = rec.get(it).unwrap_or("").trim();
        let ts = rec.get(its).unwrap_or("");
        let holders = rec.get(ih).unwrap_or("").trim();
        if ticker.is_empty() {
            rejected.push(reject("empty ticker".into()));
            continue;
        }
        let Some(observed_at) = parse_utc_timestamp(ts) else {
            rejected.push(reject(format!("unparseable timestamp `{ts}`")));
            continue;
        };
        let Ok(holders) = holders.parse::<u64>() else {
            rejected.push(reject(format!("invalid holder count `{holders}`")));
            continue;
        };
        out.push(RawSnapshot { ticker: resolve(aliases, ticker).to_string(), observed_at, holders });
    }
    Ok((out, rejected))
}

/// Loads `ticker,timestamp,price,exchange`.
pub fn read_ticks(path: &Path, aliases: &BTreeMap<String, String>) -> Result<(Vec<TradeTick>, Vec<Rejection>)> {
    let mut rdr = open(path)?;
    let h = rdr.headers()?.clone();
    let (it, its, ip, ie) = (
        column_index(&h, "ticker", path)?,
        column_index(&h, "timestamp", path)?,
        column_index(&h, "price", path)?,
        column_index(&h, "exchange", path)?,
    );
    let source = path.display().to_string();
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    let mut rec = csv::StringRecord::new();
    let mut line = 1;
    loop {
        line += 1;
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                rejected.push(Rejection { source: source.clone(), line, reason: e.to_string() });
                continue;
            }
        }
        let ticker = rec.get(it).unwrap_or("").trim();
        let ts = rec.get(its).unwrap_or("");
        let price = rec.get(ip).unwrap_or("").trim().parse::<f64>();
        let reason = match (&price, parse_tick_timestamp(ts)) {
            _ if ticker.is_empty() => Some("empty ticker".to_string()),
            (_, None) => Some(format!("unparseable timestamp `{ts}`")),
            (Ok(p), Some(_)) if !(*p > 0.0 && p.is_finite()) => Some(format!("non-positive price {p}")),
            (Err(_), _) => Some("invalid price".to_string()),
            (Ok(p), Some(traded_at)) => {
                out.push(TradeTick {
                    ticker: resolve(aliases, ticker).to_string(),
                    traded_at,
                    price: *p,
                    exchange: rec.get(ie).unwrap_or("").trim().to_string(),
                });
                None
            }
        };
        if let Some(reason) = reason {
            rejected.push(Rejection { source: source.clone(), line, reason });
        }
    }
    Ok((out, rejected))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

fn parse_date(s: &str, path: &Path, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| Error::format(path, format!("line {line}: invalid date `{s}`")))
}

fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: invalid number `{s}`")))
}

/// Loads `ticker,share_code,sector,dual_class` plus the optional companion
/// `ticker,date,ratio` split file and `ticker,date,market_cap` file.
pub fn read_metadata(
    meta_path: &Path,
    splits: Option<&Path>,
    caps: Option<&Path>,
    aliases: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, SecurityMeta>> {
    let mut out = BTreeMap::new();
    let mut rdr = open(meta_path)?;
    let h = rdr.headers()?.clone();
    let idx = [
        column_index(&h, "ticker", meta_path)?,
        column_index(&h, "share_code", meta_path)?,
        column_index(&h, "sector", meta_path)?,
        column_index(&h, "dual_class", meta_path)?,
    ];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let ticker = resolve(aliases, f(0)).to_string();
        let share_code = f(1)
            .parse()
            .map_err(|_| Error::format(meta_path, format!("line {line}: invalid share code `{}`", f(1))))?;
        let sector = Sector::parse(f(2))
            .ok_or_else(|| Error::format(meta_path, format!("line {line}: unknown sector `{}`", f(2))))?;
        let dual_class = parse_bool(f(3))
            .ok_or_else(|| Error::format(meta_path, format!("line {line}: invalid dual_class `{}`", f(3))))?;
        out.insert(
            ticker.clone(),
            SecurityMeta {
                ticker,
                share_code,
                split_events: Vec::new(),
                market_cap_series: BTreeMap::new(),
                sector,
                dual_class,
            },
        );
    }
    if let Some(path) = splits {
        let mut rdr = open(path)?;
        let h = rdr.headers()?.clone();
        let idx = [column_index(&h, "ticker", path)?, column_index(&h, "date", path)?, column_index(&h, "ratio", path)?];
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let ticker = resolve(aliases, rec.get(idx[0]).unwrap_or("").trim());
            let date = parse_date(rec.get(idx[1]).unwrap_or(""), path, line)?;
            let ratio = parse_f64(rec.get(idx[2]).unwrap_or(""), path, line)?;
            if !(ratio > 0.0) {
                return Err(Error::format(path, format!("line {line}: split ratio must be positive")));
            }
            if let Some(m) = out.get_mut(ticker) {
                m.split_events.push((date, ratio));
            }
        }
    }
    if let Some(path) = caps {
        let mut rdr = open(path)?;
        let h = rdr.headers()?.clone();
        let idx = [
            column_index(&h, "ticker", path)?,
            column_index(&h, "date", path)?,
            column_index(&h, "market_cap", path)?,
        ];
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let ticker = resolve(aliases, rec.get(idx[0]).unwrap_or("").trim());
            let date = parse_date(rec.get(idx[1]).unwrap_or(""), path, line)?;
            let cap = parse_f64(rec.get(idx[2]).unwrap_or(""), path, line)?;
            if let Some(m) = out.get_mut(ticker) {
                m.market_cap_series.insert(date, cap);
            }
        }
    }
    for m in out.values_mut() {
        m.split_events.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(out)
}

/// `alias,ticker` renaming table.
pub fn read_aliases(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut rdr = open(path)?;
    let h = rdr.headers()?.clone();
    let (ia, it) = (column_index(&h, "alias", path)?, column_index(&h, "ticker", path)?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.insert(
            rec.get(ia).unwrap_or("").trim().to_string(),
            rec.get(it).unwrap_or("").trim().to_string(),
        );
    }
    Ok(out)
}

/// `code,venue` exchange table.
pub fn read_venues(path: &Path) -> Result<VenueTable> {
    let mut rdr = open(path)?;
    let h = rdr.headers()?.clone();
    let (ic, iv) = (column_index(&h, "code", path)?, column_index(&h, "venue", path)?);
    let mut pairs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        pairs.push((rec.get(ic).unwrap_or("").trim().to_string(), rec.get(iv).unwrap_or("").trim().to_string()));
    }
    Ok(VenueTable::from_pairs(pairs))
}

/// `ticker,action,start,end` with action `exclude` or `truncate`.
pub fn read_exclusions(path: &Path) -> Result<Vec<Exclusion>> {
    let mut rdr = open(path)?;
    let h = rdr.headers()?.clone();
    let idx = [
        column_index(&h, "ticker", path)?,
        column_index(&h, "action", path)?,
        column_index(&h, "start", path)?,
        column_index(&h, "end", path)?,
    ];
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("").trim();
        let action = match f(1).to_ascii_lowercase().as_str() {
            "exclude" => ExclusionAction::Exclude,
            "truncate" => ExclusionAction::Truncate,
            other => return Err(Error::format(path, format!("line {line}: unknown action `{other}`"))),
        };
        let opt_date = |s: &str| -> Result<Option<NaiveDate>> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse_date(s, path, line).map(Some)
            }
        };
        out.push(Exclusion { ticker: f(0).to_string(), action, start: opt_date(f(2))?, end: opt_date(f(3))? });
    }
    Ok(out)
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_snapshots(path: &Path, snapshots: &[RawSnapshot]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["ticker", "timestamp", "users_holding"])?;
    for s in snapshots {
        w.write_record([
            s.ticker.as_str(),
            &s.observed_at.format("%Y-%m-%dT%H:%M:%S%.6fZ").to_string(),
            &s.holders.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ticks(path: &Path, ticks: &[TradeTick]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["ticker", "timestamp", "price", "exchange"])?;
    for t in ticks {
        w.write_record([
            t.ticker.as_str(),
            &t.traded_at.format("%Y-%m-%d %H:%M:%S%.6f").to_string(),
            &t.price.to_string(),
            &t.exchange,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the metadata file and its split and market-cap companions.
pub fn write_metadata(meta_path: &Path, splits: &Path, caps: &Path, meta: &BTreeMap<String, SecurityMeta>) -> Result<()> {
    let mut w = create(meta_path)?;
    w.write_record(["ticker", "share_code", "sector", "dual_class"])?;
    for m in meta.values() {
        w.write_record([
            m.ticker.as_str(),
            &m.share_code.to_string(),
            m.sector.label(),
            if m.dual_class { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| Error::io(meta_path, e))?;
    let mut w = create(splits)?;
    w.write_record(["ticker", "date", "ratio"])?;
    for m in meta.values() {
        for (d, r) in &m.split_events {
            w.write_record([m.ticker.as_str(), &d.to_string(), &r.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(splits, e))?;
    let mut w = create(caps)?;
    w.write_record(["ticker", "date", "market_cap"])?;
    for m in meta.values() {
        for (d, c) in &m.market_cap_series {
            w.write_record([m.ticker.as_str(), &d.to_string(), &c.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(caps, e))
}

/// Ledger as a delimited table: step, filter, observations, securities.
pub fn write_ledger(path: &Path, ledger: &FilterLedger) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["step", "filter", "observations", "securities"])?;
    for s in &ledger.steps {
        w.write_record([s.step.to_string(), s.name.clone(), s.observations.to_string(), s.securities.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct SecuritiesFile {
    market_ticker: String,
    securities: BTreeMap<String, SecurityMeta>,
}

/// Writes clean series and ticks (columnar) and the security metadata (JSON)
/// into `dir`.
pub fn write_clean(dir: &Path, clean: &CleanData) -> Result<()> {
    let mut tickers = Vec::new();
    let mut at = Vec::new();
    let mut holders = Vec::new();
    for (t, obs) in &clean.series {
        for o in obs {
            tickers.push(t.clone());
            at.push(micros(o.at));
            holders.push(o.holders as i64);
        }
    }
    let mut table = ColumnTable::new(SERIES_SCHEMA, SCHEMA_VERSION);
    table
        .push("ticker", ColumnData::Str(tickers))
        .push("at", ColumnData::I64(at))
        .push("holders", ColumnData::I64(holders));
    table.write_file(&dir.join(CLEAN_SERIES_FILE))?;

    let mut tickers = Vec::new();
    let mut at = Vec::new();
    let mut price = Vec::new();
    for (t, ticks) in &clean.ticks {
        for k in ticks {
            tickers.push(t.clone());
            at.push(micros(k.at));
            price.push(k.price);
        }
    }
    let mut table = ColumnTable::new(TICKS_SCHEMA, SCHEMA_VERSION);
    table
        .push("ticker", ColumnData::Str(tickers))
        .push("at", ColumnData::I64(at))
        .push("price", ColumnData::F64(price));
    table.write_file(&dir.join(CLEAN_TICKS_FILE))?;

    let sec = SecuritiesFile { market_ticker: clean.market_ticker.clone(), securities: clean.meta.clone() };
    let path = dir.join(SECURITIES_FILE);
    fs::write(&path, serde_json::to_string_pretty(&sec)?).map_err(|e| Error::io(&path, e))
}

/// Delimited-text export of the clean series.
pub fn write_clean_series_csv(path: &Path, clean: &CleanData) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["ticker", "timestamp", "users_holding"])?;
    for (t, obs) in &clean.series {
        for o in obs {
            w.write_record([t.as_str(), &o.at.format("%Y-%m-%d %H:%M:%S%.6f").to_string(), &o.holders.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strs(t: &mut ColumnTable, name: &str, path: &Path) -> Result<Vec<String>> {
    match t.take(name, path)? {
        ColumnData::Str(v) => Ok(v),
        _ => Err(Error::format(path, format!("column `{name}` is not text"))),
    }
}

fn ints(t: &mut ColumnTable, name: &str, path: &Path) -> Result<Vec<i64>> {
    match t.take(name, path)? {
        ColumnData::I64(v) => Ok(v),
        _ => Err(Error::format(path, format!("column `{name}` is not i64"))),
    }
}

pub fn read_clean(dir: &Path) -> Result<CleanData> {
    let path = dir.join(SECURITIES_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sec: SecuritiesFile = serde_json::from_str(&text)?;

    let path = dir.join(CLEAN_SERIES_FILE);
    let mut t = ColumnTable::read_file(&path)?;
    t.expect_schema(SERIES_SCHEMA, SCHEMA_VERSION, &path)?;
    let tickers = strs(&mut t, "ticker", &path)?;
    let at = ints(&mut t, "at", &path)?;
    let holders = ints(&mut t, "holders", &path)?;
    let mut series: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for ((tk, a), h) in tickers.into_iter().zip(at).zip(holders) {
        let at = from_micros(a).ok_or_else(|| Error::format(&path, "invalid timestamp"))?;
        series.entry(tk).or_default().push(Observation { at, holders: h as u64 });
    }

    let path = dir.join(CLEAN_TICKS_FILE);
    let mut t = ColumnTable::read_file(&path)?;
    t.expect_schema(TICKS_SCHEMA, SCHEMA_VERSION, &path)?;
    let tickers = strs(&mut t, "ticker", &path)?;
    let at = ints(&mut t, "at", &path)?;
    let price = match t.take("price", &path)? {
        ColumnData::F64(v) => v,
        _ => return Err(Error::format(&path, "column `price` is not f64")),
    };
    let mut ticks: BTreeMap<String, Vec<Tick>> = BTreeMap::new();
    for ((tk, a), p) in tickers.into_iter().zip(at).zip(price) {
        let at = from_micros(a).ok_or_else(|| Error::format(&path, "invalid timestamp"))?;
        ticks.entry(tk).or_default().push(Tick { at, price: p });
    }
    Ok(CleanData { series, ticks, meta: sec.securities, market_ticker: sec.market_ticker })
}
