//! Lagged return-group regressions of position openings: design construction,
//! pooled OLS, stock-clustered covariance and the six-lag suites.

mod io;
mod ols;
mod suite;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::ingest::Sector;
use crate::panel::{DailyPanel, MarketSeries, ObsKind, Panel, SecurityInfo};

pub use io::{read_fits_json, write_fit_summary, write_fit_table, write_fits_json};
pub use ols::{
    adj_r2, cluster_robust_cov, invert_cross_product, pooled_ols, pooled_ols_labeled, restricted_ols,
    small_sample_factor, OlsSolution,
};
pub use suite::{fit_lag, run_daily, run_spec_suite, run_suite, FitResult};

/// Lags 0..=MAX_LAG enter every specification.
pub const MAX_LAG: usize = 5;
pub const N_LAGS: usize = MAX_LAG + 1;
/// Own r, r² at five lags plus market r, r² at six lags.
pub const N_CONTROLS: usize = 2 * MAX_LAG + 2 * N_LAGS;

/// First day of the post-outbreak level.
pub fn covid_boundary() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 11).expect("valid date")
}

pub const SMALL_CAP_LIMIT: f64 = 2e9;
pub const LARGE_CAP_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    #[serde(rename = "hf")]
    HighFreq,
    Daily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dependent {
    #[serde(rename = "dn")]
    DeltaN,
    #[serde(rename = "dn_detrended")]
    DeltaNDetrended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgroupDef {
    None,
    Kind,
    Covid,
    Size,
    Sector,
}

impl SubgroupDef {
    pub fn name(self) -> &'static str {
        match self {
            SubgroupDef::None => "none",
            SubgroupDef::Kind => "kind",
            SubgroupDef::Covid => "covid",
            SubgroupDef::Size => "size",
            SubgroupDef::Sector => "sector",
        }
    }

    pub fn parse(s: &str) -> Option<SubgroupDef> {
        [SubgroupDef::None, SubgroupDef::Kind, SubgroupDef::Covid, SubgroupDef::Size, SubgroupDef::Sector]
            .into_iter()
            .find(|d| d.name() == s)
    }

    pub fn levels(self) -> Vec<String> {
        let v: Vec<&str> = match self {
            SubgroupDef::None => vec!["all"],
            SubgroupDef::Kind => vec!["OV", "ID"],
            SubgroupDef::Covid => vec!["Pre", "Post"],
            SubgroupDef::Size => vec!["S", "M", "L"],
            SubgroupDef::Sector => Sector::GICS.iter().map(|s| s.label()).collect(),
        };
        v.into_iter().map(String::from).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub lag: usize,
    pub subgroup: SubgroupDef,
    pub frequency: Frequency,
    pub dependent: Dependent,
}

impl RegressionSpec {
    pub fn n_columns(&self) -> usize {
        6 * self.subgroup.levels().len() + N_CONTROLS
    }
}

/// Column view of a panel in (stock, seq) order, ready for design building.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub frequency: Frequency,
    pub dependent: Dependent,
    pub securities: Vec<SecurityInfo>,
    pub stock: Vec<u32>,
    pub seq: Vec<u32>,
    pub day: Vec<NaiveDate>,
    pub kind: Vec<ObsKind>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    pub rm: Vec<f64>,
    pub group: Vec<Option<Group>>,
}

impl RegressionData {
    pub fn from_panel(panel: &Panel, market: &MarketSeries, dependent: Dependent) -> Result<Self> {
        if market.len() != panel.rows.len() {
            return Err(Error::Domain(format!(
                "market series has {} rows, panel {}",
                market.len(),
                panel.rows.len()
            )));
        }
        let mut order: Vec<usize> = (0..panel.rows.len()).collect();
        order.sort_by_key(|&i| (panel.rows[i].stock, panel.rows[i].seq));
        let rows = &panel.rows;
        Ok(Self {
            frequency: Frequency::HighFreq,
            dependent,
            securities: panel.securities.clone(),
            stock: order.iter().map(|&i| rows[i].stock).collect(),
            seq: order.iter().map(|&i| rows[i].seq).collect(),
            day: order.iter().map(|&i| rows[i].day).collect(),
            kind: order.iter().map(|&i| rows[i].kind).collect(),
            y: order
                .iter()
                .map(|&i| match dependent {
                    Dependent::DeltaN => rows[i].delta_n,
                    Dependent::DeltaNDetrended => rows[i].delta_n_detrended,
                })
                .collect(),
            r: order.iter().map(|&i| rows[i].std_return).collect(),
            rm: order.iter().map(|&i| market.std[i]).collect(),
            group: order.iter().map(|&i| rows[i].group).collect(),
        })
    }

    pub fn from_daily(panel: &DailyPanel, market: &MarketSeries) -> Result<Self> {
        if market.len() != panel.rows.len() {
            return Err(Error::Domain(format!(
                "market series has {} rows, daily panel {}",
                market.len(),
                panel.rows.len()
            )));
        }
        let mut order: Vec<usize> = (0..panel.rows.len()).collect();
        order.sort_by_key(|&i| (panel.rows[i].stock, panel.rows[i].seq));
        let rows = &panel.rows;
        Ok(Self {
            frequency: Frequency::Daily,
            dependent: Dependent::DeltaN,
            securities: panel.securities.clone(),
            stock: order.iter().map(|&i| rows[i].stock).collect(),
            seq: order.iter().map(|&i| rows[i].seq).collect(),
            day: order.iter().map(|&i| rows[i].day).collect(),
            kind: vec![ObsKind::Daily; rows.len()],
            y: order.iter().map(|&i| rows[i].delta_n_daily).collect(),
            r: order.iter().map(|&i| rows[i].std_return_daily).collect(),
            rm: order.iter().map(|&i| market.std[i]).collect(),
            group: order.iter().map(|&i| rows[i].group).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Whether row `i` has rows for lags 0..=MAX_LAG of the same stock.
    fn has_all_lags(&self, i: usize) -> bool {
        if i < MAX_LAG {
            return false;
        }
        let k = i - MAX_LAG;
        self.stock[k] == self.stock[i] && self.seq[k] as usize + MAX_LAG == self.seq[i] as usize
    }

    /// Own and market controls of row `i` for a lag-`lag` specification.
    fn controls(&self, i: usize, lag: usize, out: &mut [f64; N_CONTROLS]) {
        let mut c = 0;
        for j in 0..N_LAGS {
            if j == lag {
                continue;
            }
            let r = self.r[i - j];
            out[c] = r;
            out[c + 1] = r * r;
            c += 2;
        }
        for j in 0..N_LAGS {
            let r = self.rm[i - j];
            out[c] = r;
            out[c + 1] = r * r;
            c += 2;
        }
    }

    /// Indicator column of row `i` at lag `lag`.
    fn indicator(&self, partition: &Partition, i: usize, lag: usize) -> usize {
        let k = i - lag;
        let g = self.group[k].expect("sample rows are grouped").index();
        partition.level[k].expect("sample rows are labeled") as usize * 6 + g
    }
}

/// Named levels of a subgroup split and the level of every data row.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub name: String,
    pub levels: Vec<String>,
    /// `None` where the row's attribute is unknown.
    pub level: Vec<Option<u16>>,
}

impl Partition {
    pub fn new(name: impl Into<String>, levels: Vec<String>, level: Vec<Option<u16>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("a partition needs at least one level".into()));
        }
        if let Some(bad) = level.iter().flatten().find(|&&l| l as usize >= levels.len()) {
            return Err(Error::Domain(format!("level index {bad} out of range")));
        }
        Ok(Self { name: name.into(), levels, level })
    }

    pub fn from_def(data: &RegressionData, def: SubgroupDef) -> Result<Self> {
        if def == SubgroupDef::Kind && data.frequency == Frequency::Daily {
            return Err(Error::Config("the overnight/intraday split does not apply to daily data".into()));
        }
        let boundary = covid_boundary();
        let level = (0..data.len())
            .map(|i| match def {
                SubgroupDef::None => Some(0),
                SubgroupDef::Kind => match data.kind[i] {
                    ObsKind::Overnight => Some(0),
                    ObsKind::Intraday => Some(1),
                    ObsKind::Daily => None,
                },
                SubgroupDef::Covid => Some(u16::from(data.day[i] >= boundary)),
                SubgroupDef::Size => {
                    let sec = &data.securities[data.stock[i] as usize];
                    sec.market_cap_on(data.day[i]).filter(|c| c.is_finite()).map(|cap| {
                        if cap < SMALL_CAP_LIMIT {
                            0
                        } else if cap < LARGE_CAP_LIMIT {
                            1
                        } else {
                            2
                        }
                    })
                }
                SubgroupDef::Sector => {
                    let sec = data.securities[data.stock[i] as usize].sector;
                    Sector::GICS.iter().position(|&s| s == sec).map(|p| p as u16)
                }
            })
            .collect();
        Self::new(def.name(), def.levels(), level)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Rows entering all six fits of a suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub rows: Vec<usize>,
    /// Rows without all lags (first rows of each stock, continuity breaks).
    pub dropped_missing_lags: usize,
    /// Rows with all lags but a non-finite value or missing group.
    pub dropped_incomplete: usize,
    /// Rows with a lagged observation outside every subgroup level.
    pub dropped_unlabeled: usize,
}

/// Rows with lags 0..=5 present, finite, grouped and labeled.
pub fn shared_sample(data: &RegressionData, partition: &Partition) -> Result<Sample> {
    if partition.level.len() != data.len() {
        return Err(Error::Domain(format!(
            "partition labels {} rows, data has {}",
            partition.level.len(),
            data.len()
        )));
    }
    let mut s = Sample { rows: Vec::new(), dropped_missing_lags: 0, dropped_incomplete: 0, dropped_unlabeled: 0 };
    for i in 0..data.len() {
        if !data.has_all_lags(i) {
            s.dropped_missing_lags += 1;
            continue;
        }
        let complete = data.y[i].is_finite()
            && (i - MAX_LAG..=i).all(|k| data.r[k].is_finite() && data.rm[k].is_finite() && data.group[k].is_some());
        if !complete {
            s.dropped_incomplete += 1;
            continue;
        }
        if (i - MAX_LAG..=i).any(|k| partition.level[k].is_none()) {
            s.dropped_unlabeled += 1;
            continue;
        }
        s.rows.push(i);
    }
    Ok(s)
}

/// Coefficient names: indicators (group-major within level), then controls.
pub fn coefficient_labels(levels: &[String], lag: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(6 * levels.len() + N_CONTROLS);
    for level in levels {
        for g in Group::ALL {
            out.push(indicator_label(g, level, levels.len()));
        }
    }
    for j in (0..N_LAGS).filter(|&j| j != lag) {
        out.push(format!("r_lag{j}"));
        out.push(format!("r2_lag{j}"));
    }
    for j in 0..N_LAGS {
        out.push(format!("mkt_r_lag{j}"));
        out.push(format!("mkt_r2_lag{j}"));
    }
    out
}

pub fn indicator_label(g: Group, level: &str, n_levels: usize) -> String {
    if n_levels == 1 {
        g.name().to_string()
    } else {
        format!("{}:{level}", g.name())
    }
}

/// Dense design of one specification; meant for small panels and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub clusters: Vec<u32>,
    pub labels: Vec<String>,
    pub sample: Sample,
}

pub fn build_design(data: &RegressionData, partition: &Partition, lag: usize) -> Result<Design> {
    if lag > MAX_LAG {
        return Err(Error::Config(format!("lag {lag} outside 0..={MAX_LAG}")));
    }
    let sample = shared_sample(data, partition)?;
    let d = 6 * partition.n_levels();
    let k = d + N_CONTROLS;
    let n = sample.rows.len();
    let mut x = DMatrix::zeros(n, k);
    let mut ctrl = [0.0; N_CONTROLS];
    for (row, &i) in sample.rows.iter().enumerate() {
        x[(row, data.indicator(partition, i, lag))] = 1.0;
        data.controls(i, lag, &mut ctrl);
        for (m, v) in ctrl.iter().enumerate() {
            x[(row, d + m)] = *v;
        }
    }
    Ok(Design {
        y: DVector::from_iterator(n, sample.rows.iter().map(|&i| data.y[i])),
        x,
        clusters: sample.rows.iter().map(|&i| data.stock[i]).collect(),
        labels: coefficient_labels(&partition.levels, lag),
        sample,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random data set: `stocks` stocks of `len` consecutive rows each.
    pub(crate) fn toy_data(stocks: usize, len: usize, seed: u64) -> RegressionData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = stocks * len;
        let d0 = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let mut data = RegressionData {
            frequency: Frequency::HighFreq,
            dependent: Dependent::DeltaN,
            securities: (0..stocks)
                .map(|s| SecurityInfo {
                    ticker: format!("S{s}"),
                    sector: Sector::GICS[s % 11],
                    market_caps: [(d0, 1e9 * (1 + 5 * s) as f64)].into_iter().collect(),
                })
                .collect(),
            stock: Vec::with_capacity(n),
            seq: Vec::with_capacity(n),
            day: Vec::with_capacity(n),
            kind: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            rm: Vec::with_capacity(n),
            group: Vec::with_capacity(n),
        };
        let cut = crate::grouping::GroupCutoffs { q5: -1.645, q25: -0.674, q75: 0.674, q95: 1.645 };
        for s in 0..stocks {
            for t in 0..len {
                let r: f64 = rng.sample(rand_distr::StandardNormal);
                data.stock.push(s as u32);
                data.seq.push(t as u32);
                data.day.push(d0 + chrono::Duration::days((t / 7) as i64));
                data.kind.push(if t % 7 == 0 { ObsKind::Overnight } else { ObsKind::Intraday });
                data.r.push(r);
                data.rm.push(rng.sample(rand_distr::StandardNormal));
                data.group.push(Some(crate::grouping::assign_group(r, &cut).unwrap()));
                data.y.push(0.0);
            }
        }
        for i in 0..n {
            let mut y = 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            if i >= 1 && data.stock[i - 1] == data.stock[i] {
                y += [0.8, 0.1, -0.05, 0.05, 0.2, 0.5][data.group[i - 1].unwrap().index()];
            }
            data.y[i] = y;
        }
        data
    }

    #[test]
    fn column_counts() {
        let data = toy_data(3, 30, 1);
        let all = Partition::from_def(&data, SubgroupDef::None).unwrap();
        let kind = Partition::from_def(&data, SubgroupDef::Kind).unwrap();
        assert_eq!(build_design(&data, &all, 1).unwrap().x.ncols(), 28);
        assert_eq!(build_design(&data, &kind, 3).unwrap().x.ncols(), 34);
        assert_eq!(coefficient_labels(&kind.levels, 0).len(), 34);
        let spec = RegressionSpec {
            lag: 1,
            subgroup: SubgroupDef::Sector,
            frequency: Frequency::HighFreq,
            dependent: Dependent::DeltaN,
        };
        assert_eq!(spec.n_columns(), 88);
    }

    #[test]
    fn indicators_sum_to_one_per_row() {
        let data = toy_data(4, 40, 2);
        let p = Partition::from_def(&data, SubgroupDef::Covid).unwrap();
        for lag in 0..N_LAGS {
            let d = build_design(&data, &p, lag).unwrap();
            for row in 0..d.x.nrows() {
                let s: f64 = (0..12).map(|c| d.x[(row, c)]).sum();
                assert_eq!(s, 1.0);
            }
        }
    }

    #[test]
    fn first_five_rows_of_each_stock_are_dropped() {
        let data = toy_data(3, 20, 3);
        let p = Partition::from_def(&data, SubgroupDef::None).unwrap();
        let s = shared_sample(&data, &p).unwrap();
        assert_eq!(s.rows.len(), 3 * 15);
        assert_eq!(s.dropped_missing_lags, 15);
    }

    #[test]
    fn sequence_gap_breaks_lags() {
        let mut data = toy_data(1, 20, 4);
        for s in data.seq.iter_mut().skip(10) {
            *s += 1;
        }
        let p = Partition::from_def(&data, SubgroupDef::None).unwrap();
        // rows 5..10 survive, rows 10..15 lose a lag, rows 15..20 survive
        assert_eq!(shared_sample(&data, &p).unwrap().rows.len(), 10);
    }

    #[test]
    fn unknown_sector_rows_are_counted() {
        let mut data = toy_data(2, 20, 5);
        data.securities[1].sector = Sector::Unknown;
        let p = Partition::from_def(&data, SubgroupDef::Sector).unwrap();
        let s = shared_sample(&data, &p).unwrap();
        assert_eq!(s.rows.len(), 15);
        assert_eq!(s.dropped_unlabeled, 15);
    }

    #[test]
    fn levels_use_boundaries() {
        let data = toy_data(3, 30, 6);
        let covid = Partition::from_def(&data, SubgroupDef::Covid).unwrap();
        for i in 0..data.len() {
            assert_eq!(covid.level[i] == Some(1), data.day[i] >= covid_boundary());
        }
        // caps 1e9, 6e9, 1.1e10
        let size = Partition::from_def(&data, SubgroupDef::Size).unwrap();
        assert_eq!(size.level[0], Some(0));
        assert_eq!(size.level[30], Some(1));
        assert_eq!(size.level[60], Some(2));
    }

    #[test]
    fn daily_data_rejects_kind_split() {
        let mut data = toy_data(2, 10, 7);
        data.frequency = Frequency::Daily;
        assert!(Partition::from_def(&data, SubgroupDef::Kind).is_err());
    }

    #[test]
    fn dummy_mean_identity_without_controls() {
        let data = toy_data(5, 50, 8);
        let p = Partition::from_def(&data, SubgroupDef::None).unwrap();
        let d = build_design(&data, &p, 1).unwrap();
        let x = d.x.columns(0, 6).into_owned();
        let b = pooled_ols(&d.y, &x).unwrap().beta;
        for g in 0..6 {
            let ys: Vec<f64> = (0..d.y.len()).filter(|&r| x[(r, g)] == 1.0).map(|r| d.y[r]).collect();
            assert!((b[g] - crate::stats::mean(&ys)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_regression_has_near_zero_adjusted_r2() {
        let mut data = toy_data(200, 500, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for y in &mut data.y {
            *y = rng.sample(rand_distr::StandardNormal);
        }
        let p = Partition::from_def(&data, SubgroupDef::None).unwrap();
        let d = build_design(&data, &p, 2).unwrap();
        assert!(d.y.len() > 90_000);
        let s = pooled_ols(&d.y, &d.x).unwrap();
        let r2 = adj_r2(d.y.as_slice(), s.residuals.as_slice(), 28).unwrap();
        assert!(r2.abs() < 1e-3, "{r2}");
    }

    #[test]
    fn pooling_nests_interacted_fit_under_equality_restrictions() {
        let data = toy_data(6, 60, 11);
        let pooled = Partition::from_def(&data, SubgroupDef::None).unwrap();
        let split = Partition::from_def(&data, SubgroupDef::Kind).unwrap();
        let dp = build_design(&data, &pooled, 1).unwrap();
        let ds = build_design(&data, &split, 1).unwrap();
        let bp = pooled_ols(&dp.y, &dp.x).unwrap().beta;
        let mut r = DMatrix::zeros(6, 34);
        for g in 0..6 {
            r[(g, g)] = 1.0;
            r[(g, 6 + g)] = -1.0;
        }
        let br = restricted_ols(&ds.y, &ds.x, &r, &DVector::zeros(6)).unwrap();
        for g in 0..6 {
            assert!((br[g] - bp[g]).abs() < 1e-10);
            assert!((br[6 + g] - bp[g]).abs() < 1e-10);
        }
        for m in 0..N_CONTROLS {
            assert!((br[12 + m] - bp[6 + m]).abs() < 1e-10);
        }
    }
}
