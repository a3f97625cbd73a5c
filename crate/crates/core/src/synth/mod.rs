//! Synthetic holdings snapshots, trades and metadata from a known
//! data-generating process, written in the ingest input formats, plus
//! brute-force oracles.
//!
//! Prices come first: a market factor and idiosyncratic one-minute diffusion
//! within the session, asymmetric-GARCH overnight gaps. The production
//! ingest, panel, volatility and grouping code then labels every interval
//! with its return group, and holder counts are drawn so that position
//! openings follow the configured lag profile plus trend and noise.

mod oracle;
mod truth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime, TimeZone, Utc};
use chrono_tz::America::New_York;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{session_open, TradingCalendar};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::{
    validate_delay, write_metadata, write_snapshots, write_ticks, RawSnapshot, SecurityMeta, Sector, TradeTick,
    VenueTable,
};
use crate::panel::{scaling_factor, ObsKind};
use crate::pipeline::{ingest, standardized_panel, RawInputs};
use crate::regression::{covid_boundary, N_LAGS};
use crate::volatility::simulate_gjr;

pub use oracle::{oracle_cluster_cov, oracle_gjr_recursion, oracle_inverse, oracle_ols, oracle_quantile};
pub use truth::{pseudo_true_effects, recovery, run_recovery, RecoveryRow, Truth};

/// Parameters of an asymmetric GARCH(1,1) overnight process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GjrSpec {
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
    /// First simulated day (moved to the next trading day if needed).
    pub start: NaiveDate,
    pub market_ticker: String,
    pub delay_minutes: i64,
    /// `effects[lag][group]`, daily log units.
    pub effects: [[f64; 6]; N_LAGS],
    /// Added to every interval's position openings, daily log units.
    pub trend: f64,
    /// Loading of position openings on the contemporaneous standardized market return.
    pub market_effect: f64,
    pub noise_sd: f64,
    /// Per-stock noise scale is drawn from `1 ± spread`.
    pub noise_scale_spread: f64,
    /// Group effects are multiplied by this from the outbreak boundary on.
    pub post_covid_multiplier: f64,
    /// Idiosyncratic overnight returns.
    pub overnight_gjr: GjrSpec,
    pub market_overnight_gjr: GjrSpec,
    /// Probability of an idiosyncratic news jump added to an overnight gap.
    pub overnight_jump_prob: f64,
    pub overnight_jump_sd: f64,
    /// Full-session standard deviation of idiosyncratic intraday returns.
    pub intraday_vol: f64,
    pub market_intraday_vol: f64,
    pub market_beta: f64,
    pub tick_spacing_seconds: i64,
    pub tick_jitter_seconds: i64,
    /// Probability of an extra off-venue print after each tick.
    pub off_venue_share: f64,
    /// Every n-th stock gets a 2:1 split mid-sample; 0 disables.
    pub split_every: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_stocks: 200,
            n_days: 250,
            seed: 7,
            start: NaiveDate::from_ymd_opt(2018, 6, 1).expect("valid date"),
            market_ticker: "SPY".into(),
            delay_minutes: 45,
            effects: [
                [0.0200, 0.0060, 0.0020, 0.0010, 0.0040, 0.0100],
                [0.0100, 0.0030, 0.0025, 0.0024, 0.0020, 0.0040],
                [0.0080, 0.0025, 0.0015, 0.0012, 0.0015, 0.0030],
                [0.0070, 0.0020, 0.0010, 0.0010, 0.0012, 0.0025],
                [0.0065, 0.0018, 0.0008, 0.0008, 0.0010, 0.0020],
                [0.0060, 0.0015, 0.0005, 0.0005, 0.0008, 0.0018],
            ],
            trend: 0.001,
            market_effect: 0.002,
            noise_sd: 0.05,
            noise_scale_spread: 0.3,
            post_covid_multiplier: 1.0,
            overnight_gjr: GjrSpec { omega: 2e-6, alpha: 0.05, gamma: 0.10, beta: 0.85 },
            market_overnight_gjr: GjrSpec { omega: 1e-6, alpha: 0.05, gamma: 0.10, beta: 0.85 },
            overnight_jump_prob: 0.02,
            overnight_jump_sd: 0.06,
            intraday_vol: 0.015,
            market_intraday_vol: 0.008,
            market_beta: 1.0,
            tick_spacing_seconds: 300,
            tick_jitter_seconds: 60,
            off_venue_share: 0.05,
            split_every: 50,
        }
    }
}

impl DgpConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// No effects, trend, market loading or noise: holder counts never move.
    pub fn degenerate(self) -> Self {
        Self {
            effects: [[0.0; 6]; N_LAGS],
            trend: 0.0,
            market_effect: 0.0,
            noise_sd: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_delay(self.delay_minutes)?;
        if self.n_stocks == 0 || self.n_days < 2 {
            return Err(Error::Config("need at least one stock and two days".into()));
        }
        if !self.effects.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Config("effects must be finite".into()));
        }
        let finite = [
            self.trend,
            self.market_effect,
            self.noise_sd,
            self.noise_scale_spread,
            self.post_covid_multiplier,
            self.intraday_vol,
            self.market_intraday_vol,
            self.market_beta,
            self.off_venue_share,
            self.overnight_jump_sd,
        ];
        if !finite.iter().all(|v| v.is_finite()) || self.noise_sd < 0.0 {
            return Err(Error::Config("non-finite or negative scale parameter".into()));
        }
        if ![self.noise_scale_spread, self.off_venue_share, self.overnight_jump_prob]
            .iter()
            .all(|v| (0.0..1.0).contains(v))
        {
            return Err(Error::Config(
                "noise_scale_spread, off_venue_share and overnight_jump_prob must lie in [0, 1)".into(),
            ));
        }
        if self.overnight_jump_sd < 0.0 {
            return Err(Error::Config("overnight_jump_sd must be non-negative".into()));
        }
        if !(self.intraday_vol > 0.0 && self.market_intraday_vol > 0.0) {
            return Err(Error::Config("intraday volatilities must be positive".into()));
        }
        if self.tick_spacing_seconds <= 0 || self.tick_jitter_seconds < 0 || self.tick_jitter_seconds >= self.tick_spacing_seconds {
            return Err(Error::Config("tick spacing must exceed the jitter".into()));
        }
        if self.tick_spacing_seconds > 300 {
            return Err(Error::Config("ticks sparser than the 5-minute grid leave it unfilled".into()));
        }
        for g in [self.overnight_gjr, self.market_overnight_gjr] {
            let p = g.alpha + g.beta + 0.5 * g.gamma;
            if !(g.omega > 0.0 && g.alpha >= 0.0 && g.gamma >= 0.0 && g.beta >= 0.0 && p < 1.0) {
                return Err(Error::Config(format!("non-stationary overnight variance process {g:?}")));
            }
        }
        if self.market_ticker.is_empty() {
            return Err(Error::Config("market_ticker must be non-empty".into()));
        }
        Ok(())
    }

    /// Pipeline settings under which the generated data pass every filter.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            delay_minutes: self.delay_minutes,
            sample_start: self.start,
            market_ticker: self.market_ticker.clone(),
            ..PipelineConfig::default()
        }
    }

    pub fn ticker(i: usize) -> String {
        format!("S{i:04}")
    }
}

/// Random stream of one entity (stream 0 is the market).
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const HOLDER_STREAM_OFFSET: u64 = 1 << 32;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Log prices of one session: value at the open, then the open-relative path
/// at every minute (index `minutes` is the close).
struct SessionPath {
    open_log: f64,
    cum: Vec<f64>,
}

struct MarketDraws {
    gaps: Vec<f64>,
    minutes: Vec<Vec<f64>>,
}

fn market_draws(cfg: &DgpConfig, days: &[NaiveDate], cal: &TradingCalendar) -> Result<MarketDraws> {
    let mut rng = stream(cfg.seed, 0);
    let g = cfg.market_overnight_gjr;
    let gaps = simulate_gjr(g.omega, g.alpha, g.gamma, g.beta, days.len(), &mut rng)?;
    let per_minute = cfg.market_intraday_vol / 390f64.sqrt();
    let minutes = days
        .iter()
        .map(|&d| (0..cal.session_minutes(d)).map(|_| per_minute * normal(&mut rng)).collect())
        .collect();
    Ok(MarketDraws { gaps, minutes })
}

fn sessions(open0: f64, gaps: &[f64], increments: &[Vec<f64>]) -> Vec<SessionPath> {
    let mut out: Vec<SessionPath> = Vec::with_capacity(gaps.len());
    for (d, inc) in increments.iter().enumerate() {
        let open_log = match out.last() {
            None => open0,
            Some(prev) => prev.open_log + prev.cum.last().copied().unwrap_or(0.0) + gaps[d],
        };
        let mut cum = Vec::with_capacity(inc.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for v in inc {
            acc += v;
            cum.push(acc);
        }
        out.push(SessionPath { open_log, cum });
    }
    out
}

fn round4(p: f64) -> f64 {
    (p * 1e4).round() / 1e4
}

#[allow(clippy::too_many_arguments)]
fn path_ticks(
    ticker: &str,
    exchange: &str,
    paths: &[SessionPath],
    days: &[NaiveDate],
    cal: &TradingCalendar,
    cfg: &DgpConfig,
    split: Option<NaiveDate>,
    rng: &mut ChaCha8Rng,
) -> Vec<TradeTick> {
    let mut out = Vec::new();
    for (path, &d) in paths.iter().zip(days) {
        let open = d.and_time(session_open());
        let close = d.and_time(cal.close_time(d));
        let ratio = if split.is_some_and(|s| d < s) { 2.0 } else { 1.0 };
        let mut base = open;
        while base <= close {
            let t = base + Duration::seconds(rng.gen_range(0..=cfg.tick_jitter_seconds));
            if t > close {
                break;
            }
            let minute = ((t - open).num_seconds() / 60) as usize;
            let lp = path.open_log + path.cum[minute.min(path.cum.len() - 1)];
            out.push(TradeTick {
                ticker: ticker.to_string(),
                traded_at: t,
                price: round4(lp.exp()) * ratio,
                exchange: exchange.to_string(),
            });
            if rng.gen_bool(cfg.off_venue_share) {
                let t_off = t + Duration::seconds(cfg.tick_spacing_seconds / 2);
                if t_off <= close {
                    out.push(TradeTick {
                        ticker: ticker.to_string(),
                        traded_at: t_off,
                        price: round4(lp.exp() * (1.0 + 0.01 * normal(rng))) * ratio,
                        exchange: "D".to_string(),
                    });
                }
            }
            base += Duration::seconds(cfg.tick_spacing_seconds);
        }
    }
    out
}

/// New York snapshot times: 15 minutes past each hour from 09:45 until the close.
fn snapshot_times(days: &[NaiveDate], cal: &TradingCalendar, rng: &mut ChaCha8Rng) -> Vec<NaiveDateTime> {
    let mut out = Vec::new();
    for &d in days {
        let close = d.and_time(cal.close_time(d));
        let mut t = d.and_time(session_open()) + Duration::minutes(15);
        while t < close {
            out.push(t + Duration::seconds(rng.gen_range(0..20)));
            t += Duration::hours(1);
        }
    }
    out
}

fn retrieval_time(ny: NaiveDateTime, delay_minutes: i64) -> Result<chrono::DateTime<Utc>> {
    let local = New_York
        .from_local_datetime(&ny)
        .single()
        .ok_or_else(|| Error::Domain(format!("ambiguous New York time {ny}")))?;
    Ok(local.with_timezone(&Utc) + Duration::minutes(delay_minutes))
}

struct StockDraw {
    ticker: String,
    meta: SecurityMeta,
    ticks: Vec<TradeTick>,
    times: Vec<NaiveDateTime>,
    holders0: u64,
}

fn draw_stock(
    cfg: &DgpConfig,
    id: usize,
    days: &[NaiveDate],
    cal: &TradingCalendar,
    market: &MarketDraws,
) -> Result<StockDraw> {
    let mut rng = stream(cfg.seed, id as u64 + 1);
    let ticker = DgpConfig::ticker(id);
    let p0: f64 = rng.gen_range(20f64.ln()..200f64.ln());
    let cap0 = rng.gen_range(3e8f64.ln()..5e10f64.ln()).exp();
    let holders0 = rng.gen_range(5e4f64.ln()..1e6f64.ln()).exp().round() as u64;
    let g = cfg.overnight_gjr;
    let mut idio = simulate_gjr(g.omega, g.alpha, g.gamma, g.beta, days.len(), &mut rng)?;
    for e in idio.iter_mut() {
        if rng.gen_bool(cfg.overnight_jump_prob) {
            *e += cfg.overnight_jump_sd * normal(&mut rng);
        }
    }
    let gaps: Vec<f64> = idio.iter().zip(&market.gaps).map(|(e, m)| cfg.market_beta * m + e).collect();
    let per_minute = cfg.intraday_vol / 390f64.sqrt();
    let increments: Vec<Vec<f64>> = market
        .minutes
        .iter()
        .map(|day| day.iter().map(|m| cfg.market_beta * m + per_minute * normal(&mut rng)).collect())
        .collect();
    let paths = sessions(p0, &gaps, &increments);
    let split = (cfg.split_every > 0 && id % cfg.split_every == 3).then(|| days[days.len() / 2]);
    let exchange = ["N", "Q", "A"][id % 3];
    let ticks = path_ticks(&ticker, exchange, &paths, days, cal, cfg, split, &mut rng);
    let times = snapshot_times(days, cal, &mut rng);

    let shares = cap0 / p0.exp();
    let market_cap_series = paths
        .iter()
        .zip(days)
        .enumerate()
        .filter(|(i, _)| i % 21 == 0)
        .map(|(_, (p, &d))| (d, shares * (p.open_log + p.cum.last().copied().unwrap_or(0.0)).exp()))
        .collect();
    let meta = SecurityMeta {
        ticker: ticker.clone(),
        share_code: if id % 2 == 0 { 10 } else { 11 },
        split_events: split.map(|d| vec![(d, 2.0)]).unwrap_or_default(),
        market_cap_series,
        sector: Sector::GICS[id % Sector::GICS.len()],
        dual_class: false,
    };
    Ok(StockDraw { ticker, meta, ticks, times, holders0 })
}

/// A generated data set and the truth it encodes.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub raw: RawInputs,
    pub truth: Truth,
}

/// Generates everything in memory.
pub fn simulate(cfg: &DgpConfig) -> Result<Simulated> {
    cfg.validate()?;
    let cal = TradingCalendar::bundled();
    let days = cal.trading_days_from(cfg.start, cfg.n_days);
    let market = market_draws(cfg, &days, &cal)?;

    let mut market_rng = stream(cfg.seed, u64::MAX >> 1);
    let market_paths = sessions(100f64.ln(), &market.gaps, &market.minutes);
    let mut ticks = path_ticks(&cfg.market_ticker, "N", &market_paths, &days, &cal, cfg, None, &mut market_rng);

    let stocks: Vec<StockDraw> = (0..cfg.n_stocks)
        .into_par_iter()
        .map(|id| draw_stock(cfg, id, &days, &cal, &market))
        .collect::<Result<_>>()?;

    let mut snapshots = Vec::new();
    let mut meta = BTreeMap::new();
    for s in &stocks {
        for (k, &t) in s.times.iter().enumerate() {
            snapshots.push(RawSnapshot {
                ticker: s.ticker.clone(),
                observed_at: retrieval_time(t, cfg.delay_minutes)?,
                holders: s.holders0 + k as u64,
            });
        }
        meta.insert(s.ticker.clone(), s.meta.clone());
    }
    for s in &stocks {
        ticks.extend(s.ticks.iter().cloned());
    }
    let mut raw = RawInputs { snapshots, ticks, meta, venues: VenueTable::default(), exclusions: Vec::new() };

    // labeling pass: holder counts do not affect which intervals survive or their groups
    let pcfg = cfg.pipeline_config();
    let (clean, _) = ingest(raw.clone(), &pcfg, &cal)?;
    let sp = standardized_panel(&clean, &pcfg, &cal)?;
    let panel = &sp.panel;

    let ids: BTreeMap<&str, usize> = stocks.iter().enumerate().map(|(i, s)| (s.ticker.as_str(), i)).collect();
    let boundary = covid_boundary();
    let mut signal = vec![0.0; panel.rows.len()];
    let mut noise_scale = BTreeMap::new();
    let mut holder_paths: BTreeMap<String, BTreeMap<NaiveDateTime, u64>> = BTreeMap::new();
    for range in panel.stock_ranges() {
        let rows = &panel.rows[range.clone()];
        let ticker = panel.securities[rows[0].stock as usize].ticker.clone();
        let id = ids[ticker.as_str()];
        let mut rng = stream(cfg.seed, HOLDER_STREAM_OFFSET + id as u64);
        let scale = 1.0 + cfg.noise_scale_spread * rng.gen_range(-1.0..1.0);
        noise_scale.insert(ticker.clone(), scale);

        let mut by_seq: BTreeMap<u32, f64> = BTreeMap::new();
        for (p, row) in rows.iter().enumerate() {
            let k = range.start + p;
            let mult = if row.day >= boundary { cfg.post_covid_multiplier } else { 1.0 };
            let mut m = cfg.trend + cfg.market_effect * sp.market.std[k];
            for j in 0..N_LAGS.min(p + 1) {
                let lagged = &rows[p - j];
                if lagged.seq as usize + j == row.seq as usize {
                    if let Some(g) = lagged.group {
                        m += mult * cfg.effects[j][g.index()];
                    }
                }
            }
            signal[k] = m;
            by_seq.insert(row.seq, m);
        }

        let obs = &clean.series[&ticker];
        let mut n = stocks[id].holders0;
        let path = holder_paths.entry(ticker.clone()).or_default();
        path.insert(obs[0].at, n);
        for (i, w) in obs.windows(2).enumerate() {
            let m = by_seq.get(&(i as u32)).copied().unwrap_or(cfg.trend);
            let y = m + cfg.noise_sd * scale * normal(&mut rng);
            let kind = if w[0].at.date() == w[1].at.date() { ObsKind::Intraday } else { ObsKind::Overnight };
            let mnt = (w[1].at - w[0].at).num_seconds() as f64 / 60.0;
            let sf = scaling_factor(kind, mnt)?;
            n = ((n as f64 + 1.0) * (y / sf).exp() - 1.0).round().max(0.0) as u64;
            path.insert(w[1].at, n);
        }
    }

    let mut k = 0;
    for s in &stocks {
        for &t in &s.times {
            let held = holder_paths
                .get(&s.ticker)
                .and_then(|p| p.range(..=t).next_back().map(|(_, &v)| v))
                .unwrap_or(s.holders0);
            raw.snapshots[k].holders = held;
            k += 1;
        }
    }

    let (pseudo_true, sample_rows) = pseudo_true_effects(panel, &sp.market, &signal)?;
    let truth = Truth {
        dgp: cfg.clone(),
        injected: cfg.effects,
        pseudo_true,
        panel_rows: panel.rows.len(),
        sample_rows,
        noise_scale,
    };
    Ok(Simulated { raw, truth })
}

/// Paths of a generated data set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticFiles {
    pub snapshots: PathBuf,
    pub ticks: PathBuf,
    pub metadata: PathBuf,
    pub splits: PathBuf,
    pub caps: PathBuf,
    pub truth: PathBuf,
    pub pipeline_config: PathBuf,
}

impl SyntheticFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            snapshots: dir.join("snapshots.csv"),
            ticks: dir.join("ticks.csv"),
            metadata: dir.join("securities.csv"),
            splits: dir.join("splits.csv"),
            caps: dir.join("market_caps.csv"),
            truth: dir.join("truth.json"),
            pipeline_config: dir.join("pipeline.toml"),
        }
    }
}

/// Simulates and writes the ingest inputs, the truth manifest and a matching
/// pipeline configuration into `dir`.
pub fn generate_panel(cfg: &DgpConfig, dir: &Path) -> Result<SyntheticFiles> {
    let sim = simulate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SyntheticFiles::in_dir(dir);
    write_snapshots(&files.snapshots, &sim.raw.snapshots)?;
    write_ticks(&files.ticks, &sim.raw.ticks)?;
    write_metadata(&files.metadata, &files.splits, &files.caps, &sim.raw.meta)?;
    sim.truth.write(&files.truth)?;
    std::fs::write(&files.pipeline_config, cfg.pipeline_config().to_text())
        .map_err(|e| Error::io(&files.pipeline_config, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DgpConfig {
        DgpConfig { n_stocks: 12, n_days: 245, split_every: 5, ..DgpConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(DgpConfig::default().validate().is_ok());
        let mut bad = DgpConfig::default();
        bad.overnight_gjr.beta = 0.95;
        assert!(bad.validate().is_err());
        assert!(DgpConfig { delay_minutes: 40, ..DgpConfig::default() }.validate().is_err());
        let text = DgpConfig::default().to_text();
        assert_eq!(DgpConfig::parse(&text).unwrap(), DgpConfig::default());
    }

    #[test]
    fn snapshot_schedule() {
        let cal = TradingCalendar::bundled();
        let full = NaiveDate::from_ymd_opt(2018, 6, 4).unwrap();
        let half = NaiveDate::from_ymd_opt(2018, 7, 3).unwrap();
        let mut rng = stream(1, 1);
        assert_eq!(snapshot_times(&[full], &cal, &mut rng).len(), 7);
        assert_eq!(snapshot_times(&[half], &cal, &mut rng).len(), 4);
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = DgpConfig { n_stocks: 3, ..small() };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.raw.snapshots, b.raw.snapshots);
        assert_eq!(a.raw.ticks, b.raw.ticks);
        assert_eq!(a.truth, b.truth);
        let c = simulate(&DgpConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.raw.ticks, c.raw.ticks);
    }

    #[test]
    fn generated_data_pass_every_filter() {
        let cfg = small();
        let sim = simulate(&cfg).unwrap();
        let pcfg = cfg.pipeline_config();
        let (clean, ledger) = ingest(sim.raw, &pcfg, &TradingCalendar::bundled()).unwrap();
        assert!(ledger.no_attrition(), "{:?}", ledger.steps);
        assert_eq!(clean.series.len(), cfg.n_stocks);
    }

    #[test]
    fn degenerate_process_is_excluded_at_the_last_step() {
        let cfg = DgpConfig { n_stocks: 3, ..small() }.degenerate();
        let sim = simulate(&cfg).unwrap();
        match ingest(sim.raw, &cfg.pipeline_config(), &TradingCalendar::bundled()) {
            Err(Error::EmptyPanel { step, .. }) => assert_eq!(step, 12),
            other => panic!("{:?}", other.map(|(_, l)| l)),
        }
    }

    #[test]
    fn single_lag_effects_are_recovered_at_their_lag() {
        let mut effects = [[0.0; 6]; N_LAGS];
        effects[2] = [0.02, 0.005, -0.002, 0.001, 0.006, 0.012];
        let cfg = DgpConfig {
            n_stocks: 40,
            effects,
            trend: 0.0,
            market_effect: 0.0,
            ..small()
        };
        let rows = run_recovery(&cfg).unwrap();
        for r in rows.iter().filter(|r| r.lag == 2) {
            // the projection target equals the injected value up to sampling error
            assert!((r.truth - r.injected).abs() < 3.0 * r.se, "{r:?}");
            assert!(r.z.abs() < 4.0, "{r:?}");
        }
    }
}
