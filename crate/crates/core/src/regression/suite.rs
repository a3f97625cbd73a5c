//! Streaming cross-product accumulation and the six-lag suites.
//!
//! Cross products and cluster scores are accumulated per fixed block of
//! stocks with compensated sums and merged in stock order, so results do not
//! depend on the worker count.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ols::{adj_r2_from_sums, invert_cross_product, small_sample_factor};
use super::{
    coefficient_labels, shared_sample, Dependent, Frequency, Partition, RegressionData, Sample,
    SubgroupDef, MAX_LAG, N_CONTROLS, N_LAGS,
};
use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Stocks per accumulation block.
const BLOCK_STOCKS: usize = 8;

/// One fitted specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub lag: usize,
    pub subgroup: String,
    pub levels: Vec<String>,
    pub frequency: Frequency,
    pub dependent: Dependent,
    pub labels: Vec<String>,
    /// Daily log units.
    pub beta: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub adj_r2: f64,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub rss: f64,
    pub tss: f64,
    pub small_sample_correction: bool,
    pub dropped_missing_lags: usize,
    pub dropped_incomplete: usize,
    pub dropped_unlabeled: usize,
}

impl FitResult {
    pub fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::MissingCoefficient(label.to_string()))
    }

    pub fn coef(&self, label: &str) -> Result<f64> {
        Ok(self.beta[self.index(label)?])
    }

    pub fn se(&self, label: &str) -> Result<f64> {
        let i = self.index(label)?;
        Ok(self.vcov[i][i].sqrt())
    }

    pub fn t_stat(&self, label: &str) -> Result<f64> {
        Ok(self.coef(label)? / self.se(label)?)
    }

    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        let k = self.beta.len();
        DMatrix::from_fn(k, k, |i, j| self.vcov[i][j])
    }

    /// Residuals of this fit on the rows it was estimated on, as (row, residual).
    pub fn residuals(&self, data: &RegressionData, partition: &Partition) -> Result<Vec<(usize, f64)>> {
        if partition.levels != self.levels {
            return Err(Error::Domain("partition does not match the fit".into()));
        }
        let sample = shared_sample(data, partition)?;
        let d = 6 * partition.n_levels();
        let mut ctrl = [0.0; N_CONTROLS];
        Ok(sample
            .rows
            .iter()
            .map(|&i| {
                data.controls(i, self.lag, &mut ctrl);
                let fit = self.beta[data.indicator(partition, i, self.lag)]
                    + ctrl.iter().zip(&self.beta[d..]).map(|(c, b)| c * b).sum::<f64>();
                (i, data.y[i] - fit)
            })
            .collect())
    }
}

/// Sufficient statistics of one block of stocks.
struct CrossBlock {
    counts: Vec<f64>,
    /// Indicator x control sums, row-major `d x N_CONTROLS`.
    cross: Vec<CompensatedSum>,
    /// Upper triangle of the control block, row-major `N_CONTROLS^2`.
    ctrl: Vec<CompensatedSum>,
    b_ind: Vec<CompensatedSum>,
    b_ctrl: Vec<CompensatedSum>,
}

impl CrossBlock {
    fn new(d: usize) -> Self {
        Self {
            counts: vec![0.0; d],
            cross: vec![CompensatedSum::new(); d * N_CONTROLS],
            ctrl: vec![CompensatedSum::new(); N_CONTROLS * N_CONTROLS],
            b_ind: vec![CompensatedSum::new(); d],
            b_ctrl: vec![CompensatedSum::new(); N_CONTROLS],
        }
    }

    fn merge(&mut self, o: &CrossBlock) {
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
        for (a, b) in [
            (&mut self.cross, &o.cross),
            (&mut self.ctrl, &o.ctrl),
            (&mut self.b_ind, &o.b_ind),
            (&mut self.b_ctrl, &o.b_ctrl),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }
}

fn stock_blocks(data: &RegressionData, rows: &[usize]) -> Vec<Range<usize>> {
    let mut stocks = Vec::new();
    let mut start = 0;
    for p in 1..=rows.len() {
        if p == rows.len() || data.stock[rows[p]] != data.stock[rows[start]] {
            stocks.push(start..p);
            start = p;
        }
    }
    stocks
        .chunks(BLOCK_STOCKS)
        .map(|c| c[0].start..c[c.len() - 1].end)
        .collect()
}

fn accumulate(data: &RegressionData, partition: &Partition, rows: &[usize], lag: usize, d: usize) -> CrossBlock {
    let mut acc = CrossBlock::new(d);
    let mut c = [0.0; N_CONTROLS];
    for &i in rows {
        let a = data.indicator(partition, i, lag);
        data.controls(i, lag, &mut c);
        let y = data.y[i];
        acc.counts[a] += 1.0;
        acc.b_ind[a].add(y);
        let cross = &mut acc.cross[a * N_CONTROLS..(a + 1) * N_CONTROLS];
        for m in 0..N_CONTROLS {
            cross[m].add(c[m]);
            acc.b_ctrl[m].add(c[m] * y);
            let row = &mut acc.ctrl[m * N_CONTROLS..(m + 1) * N_CONTROLS];
            for q in m..N_CONTROLS {
                row[q].add(c[m] * c[q]);
            }
        }
    }
    acc
}

struct MeatBlock {
    meat: Vec<CompensatedSum>,
    rss: CompensatedSum,
    tss: CompensatedSum,
    clusters: usize,
}

fn meat_block(
    data: &RegressionData,
    partition: &Partition,
    rows: &[usize],
    lag: usize,
    beta: &[f64],
    y_mean: f64,
) -> MeatBlock {
    let k = beta.len();
    let d = k - N_CONTROLS;
    let mut out = MeatBlock {
        meat: vec![CompensatedSum::new(); k * k],
        rss: CompensatedSum::new(),
        tss: CompensatedSum::new(),
        clusters: 0,
    };
    let mut c = [0.0; N_CONTROLS];
    let mut score = vec![CompensatedSum::new(); k];
    let mut start = 0;
    for p in 0..=rows.len() {
        let boundary = p == rows.len() || (p > start && data.stock[rows[p]] != data.stock[rows[start]]);
        if boundary && p > start {
            let s: Vec<f64> = score.iter().map(|v| v.value()).collect();
            for a in 0..k {
                if s[a] == 0.0 {
                    continue;
                }
                let row = &mut out.meat[a * k..(a + 1) * k];
                for b in a..k {
                    row[b].add(s[a] * s[b]);
                }
            }
            score.iter_mut().for_each(|v| *v = CompensatedSum::new());
            out.clusters += 1;
            start = p;
        }
        if p == rows.len() {
            break;
        }
        let i = rows[p];
        let a = data.indicator(partition, i, lag);
        data.controls(i, lag, &mut c);
        let fitted = beta[a] + c.iter().zip(&beta[d..]).map(|(x, b)| x * b).sum::<f64>();
        let u = data.y[i] - fitted;
        out.rss.add(u * u);
        out.tss.add((data.y[i] - y_mean).powi(2));
        score[a].add(u);
        for m in 0..N_CONTROLS {
            score[d + m].add(c[m] * u);
        }
    }
    out
}

/// Fits one lag on a precomputed shared sample.
pub fn fit_lag(
    data: &RegressionData,
    partition: &Partition,
    sample: &Sample,
    lag: usize,
    small_sample: bool,
) -> Result<FitResult> {
    if lag > MAX_LAG {
        return Err(Error::Config(format!("lag {lag} outside 0..={MAX_LAG}")));
    }
    let d = 6 * partition.n_levels();
    let k = d + N_CONTROLS;
    let n = sample.rows.len();
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} sample rows for {k} coefficients")));
    }
    let labels = coefficient_labels(&partition.levels, lag);
    let blocks = stock_blocks(data, &sample.rows);

    let parts: Vec<CrossBlock> = blocks
        .par_iter()
        .map(|r| accumulate(data, partition, &sample.rows[r.clone()], lag, d))
        .collect();
    let mut total = CrossBlock::new(d);
    for p in &parts {
        total.merge(p);
    }
    drop(parts);

    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for g in 0..d {
        a[(g, g)] = total.counts[g];
        b[g] = total.b_ind[g].value();
        for m in 0..N_CONTROLS {
            let v = total.cross[g * N_CONTROLS + m].value();
            a[(g, d + m)] = v;
            a[(d + m, g)] = v;
        }
    }
    for m in 0..N_CONTROLS {
        b[d + m] = total.b_ctrl[m].value();
        for q in m..N_CONTROLS {
            let v = total.ctrl[m * N_CONTROLS + q].value();
            a[(d + m, d + q)] = v;
            a[(d + q, d + m)] = v;
        }
    }

    let bread = invert_cross_product(&a, Some(&labels))?;
    // one refinement step against the accumulated normal equations
    let mut beta = &bread * &b;
    let resid = &b - &a * &beta;
    beta += &bread * resid;

    let y_mean = {
        let s: CompensatedSum = sample.rows.iter().map(|&i| data.y[i]).collect();
        s.value() / n as f64
    };
    let beta_vec: Vec<f64> = beta.iter().copied().collect();
    let meats: Vec<MeatBlock> = blocks
        .par_iter()
        .map(|r| meat_block(data, partition, &sample.rows[r.clone()], lag, &beta_vec, y_mean))
        .collect();
    let mut meat_sum = vec![CompensatedSum::new(); k * k];
    let (mut rss, mut tss, mut g) = (CompensatedSum::new(), CompensatedSum::new(), 0usize);
    for m in &meats {
        for (x, y) in meat_sum.iter_mut().zip(&m.meat) {
            x.merge(y);
        }
        rss.merge(&m.rss);
        tss.merge(&m.tss);
        g += m.clusters;
    }
    if g < 2 {
        return Err(Error::InsufficientData("clustered covariance needs at least two stocks".into()));
    }
    let meat = DMatrix::from_fn(k, k, |i, j| meat_sum[i.min(j) * k + i.max(j)].value());
    let mut v = &bread * meat * &bread;
    if small_sample {
        v *= small_sample_factor(g, n, k);
    }
    let v = (&v + v.transpose()) * 0.5;

    Ok(FitResult {
        lag,
        subgroup: partition.name.clone(),
        levels: partition.levels.clone(),
        frequency: data.frequency,
        dependent: data.dependent,
        labels,
        beta: beta_vec,
        vcov: (0..k).map(|i| v.row(i).iter().copied().collect()).collect(),
        adj_r2: adj_r2_from_sums(rss.value(), tss.value(), n, k),
        n_obs: n,
        n_clusters: g,
        rss: rss.value(),
        tss: tss.value(),
        small_sample_correction: small_sample,
        dropped_missing_lags: sample.dropped_missing_lags,
        dropped_incomplete: sample.dropped_incomplete,
        dropped_unlabeled: sample.dropped_unlabeled,
    })
}

/// Six fits, lags 0..=5, on one shared sample.
pub fn run_suite(data: &RegressionData, partition: &Partition, small_sample: bool) -> Result<Vec<FitResult>> {
    let sample = shared_sample(data, partition)?;
    if sample.rows.is_empty() {
        return Err(Error::InsufficientData("no row has all six lags".into()));
    }
    (0..N_LAGS).map(|lag| fit_lag(data, partition, &sample, lag, small_sample)).collect()
}

pub fn run_spec_suite(data: &RegressionData, subgroup: SubgroupDef, small_sample: bool) -> Result<Vec<FitResult>> {
    let partition = Partition::from_def(data, subgroup)?;
    run_suite(data, &partition, small_sample)
}

/// Daily-frequency suite; `data` must come from a daily panel.
pub fn run_daily(data: &RegressionData, subgroup: SubgroupDef, small_sample: bool) -> Result<Vec<FitResult>> {
    if data.frequency != Frequency::Daily {
        return Err(Error::Config("run_daily expects daily-frequency data".into()));
    }
    run_spec_suite(data, subgroup, small_sample)
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy_data;
    use super::super::{build_design, cluster_robust_cov, pooled_ols};
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn streaming_matches_dense_route() {
        let data = toy_data(9, 80, 21);
        for def in [SubgroupDef::None, SubgroupDef::Kind, SubgroupDef::Size] {
            let p = Partition::from_def(&data, def).unwrap();
            let fits = run_suite(&data, &p, true).unwrap();
            for fit in &fits {
                let d = build_design(&data, &p, fit.lag).unwrap();
                let s = pooled_ols(&d.y, &d.x).unwrap();
                let v = cluster_robust_cov(&d.x, &s.residuals, &d.clusters, true).unwrap();
                for j in 0..d.x.ncols() {
                    assert!((fit.beta[j] - s.beta[j]).abs() < 1e-10 * (1.0 + s.beta[j].abs()));
                    for q in 0..d.x.ncols() {
                        assert!((fit.vcov[j][q] - v[(j, q)]).abs() < 1e-10 * (1.0 + v[(j, j)].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn six_fits_share_rows() {
        let data = toy_data(5, 50, 22);
        let fits = run_spec_suite(&data, SubgroupDef::Kind, true).unwrap();
        assert_eq!(fits.len(), 6);
        assert!(fits.iter().all(|f| f.n_obs == fits[0].n_obs && f.n_obs == 5 * 45));
        assert!(fits.iter().enumerate().all(|(l, f)| f.lag == l));
    }

    #[test]
    fn vcov_is_symmetric_psd() {
        let data = toy_data(12, 60, 23);
        for fit in run_spec_suite(&data, SubgroupDef::Kind, true).unwrap() {
            let v = fit.vcov_matrix();
            assert_eq!(v, v.transpose());
            let trace = v.trace();
            let eig = v.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -1e-10 * trace));
        }
    }

    #[test]
    fn row_shuffle_does_not_change_results() {
        let data = toy_data(10, 40, 24);
        let base = run_spec_suite(&data, SubgroupDef::None, true).unwrap();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let pick = |v: &Vec<f64>| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let shuffled = RegressionData {
            stock: order.iter().map(|&i| data.stock[i]).collect(),
            seq: order.iter().map(|&i| data.seq[i]).collect(),
            day: order.iter().map(|&i| data.day[i]).collect(),
            kind: order.iter().map(|&i| data.kind[i]).collect(),
            group: order.iter().map(|&i| data.group[i]).collect(),
            y: pick(&data.y),
            r: pick(&data.r),
            rm: pick(&data.rm),
            ..data.clone()
        };
        // re-sorting goes through the panel constructor in production; mimic it
        let mut idx: Vec<usize> = (0..shuffled.len()).collect();
        idx.sort_by_key(|&i| (shuffled.stock[i], shuffled.seq[i]));
        let resorted = RegressionData {
            stock: idx.iter().map(|&i| shuffled.stock[i]).collect(),
            seq: idx.iter().map(|&i| shuffled.seq[i]).collect(),
            day: idx.iter().map(|&i| shuffled.day[i]).collect(),
            kind: idx.iter().map(|&i| shuffled.kind[i]).collect(),
            group: idx.iter().map(|&i| shuffled.group[i]).collect(),
            y: idx.iter().map(|&i| shuffled.y[i]).collect(),
            r: idx.iter().map(|&i| shuffled.r[i]).collect(),
            rm: idx.iter().map(|&i| shuffled.rm[i]).collect(),
            ..shuffled.clone()
        };
        let again = run_spec_suite(&resorted, SubgroupDef::None, true).unwrap();
        for (a, b) in base.iter().zip(&again) {
            for (x, y) in a.beta.iter().zip(&b.beta) {
                assert!(close(*x, *y, 1e-10));
            }
        }
    }

    #[test]
    fn residual_accessor_matches_rss() {
        let data = toy_data(6, 40, 25);
        let p = Partition::from_def(&data, SubgroupDef::None).unwrap();
        let fits = run_suite(&data, &p, true).unwrap();
        let u = fits[2].residuals(&data, &p).unwrap();
        let rss: f64 = u.iter().map(|(_, e)| e * e).sum();
        assert!(close(rss, fits[2].rss, 1e-10));
    }

    #[test]
    fn empty_level_is_rank_deficient() {
        let data = toy_data(4, 40, 26);
        // every row in level 0 of a two-level split
        let p = Partition::new("two", vec!["a".into(), "b".into()], vec![Some(0); data.len()]).unwrap();
        match run_suite(&data, &p, true) {
            Err(Error::RankDeficient { columns }) => assert!(columns[0].ends_with(":b")),
            other => panic!("{other:?}"),
        }
    }
}
