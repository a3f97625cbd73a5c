//! Estimation targets of a simulated panel and their comparison with fits.
//!
//! Position openings are drawn as `signal + noise`. Because controls and
//! indicators of other lags are correlated with the lag-`L` indicators, the
//! target of the lag-`L` fit is the least-squares projection of the noiseless
//! signal on that fit's design, computed here with plain loops and the oracle
//! inverse. It equals the injected effects when only lag `L` carries signal
//! and the other regressors are orthogonal to it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::oracle::oracle_inverse;
use super::{simulate, DgpConfig};
use crate::calendar::TradingCalendar;
use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::panel::{MarketSeries, Panel};
use crate::pipeline::{ingest, standardized_panel};
use crate::regression::{run_spec_suite, Dependent, FitResult, RegressionData, SubgroupDef, N_LAGS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub dgp: DgpConfig,
    /// `injected[lag][group]`.
    pub injected: [[f64; 6]; N_LAGS],
    /// `pseudo_true[lag][group]`: projection targets of the six fits.
    pub pseudo_true: Vec<[f64; 6]>,
    pub panel_rows: usize,
    /// Rows with all lags available, the shared estimation sample.
    pub sample_rows: usize,
    pub noise_scale: BTreeMap<String, f64>,
}

impl Truth {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Group coefficients of the projection of `signal` (aligned with panel rows)
/// on each lag's design, and the number of rows in the shared sample.
pub fn pseudo_true_effects(panel: &Panel, market: &MarketSeries, signal: &[f64]) -> Result<(Vec<[f64; 6]>, usize)> {
    let rows = &panel.rows;
    if signal.len() != rows.len() || market.std.len() != rows.len() {
        return Err(Error::Domain("signal, market and panel lengths differ".into()));
    }
    let usable = |i: usize| {
        i >= N_LAGS - 1
            && rows[i - (N_LAGS - 1)].stock == rows[i].stock
            && rows[i - (N_LAGS - 1)].seq as usize + N_LAGS - 1 == rows[i].seq as usize
            && (0..N_LAGS).all(|j| {
                let r = &rows[i - j];
                r.group.is_some() && r.std_return.is_finite() && market.std[i - j].is_finite()
            })
    };
    let sample: Vec<usize> = (0..rows.len()).filter(|&i| usable(i)).collect();
    if sample.is_empty() {
        return Err(Error::InsufficientData("no rows with six lags".into()));
    }
    let k = 6 + 2 * (N_LAGS - 1) + 2 * N_LAGS;
    let mut out = Vec::with_capacity(N_LAGS);
    for lag in 0..N_LAGS {
        let mut xtx = vec![vec![0.0; k]; k];
        let mut xty = vec![0.0; k];
        let mut x = vec![0.0; k];
        for &i in &sample {
            x.iter_mut().for_each(|v| *v = 0.0);
            let g: Group = rows[i - lag].group.expect("checked");
            x[g.index()] = 1.0;
            let mut c = 6;
            for j in (0..N_LAGS).filter(|&j| j != lag) {
                let r = rows[i - j].std_return;
                x[c] = r;
                x[c + 1] = r * r;
                c += 2;
            }
            for j in 0..N_LAGS {
                let r = market.std[i - j];
                x[c] = r;
                x[c + 1] = r * r;
                c += 2;
            }
            for a in 0..k {
                xty[a] += x[a] * signal[i];
                for b in 0..k {
                    xtx[a][b] += x[a] * x[b];
                }
            }
        }
        let inv = oracle_inverse(&xtx)?;
        let mut coef = [0.0; 6];
        for (g, c) in coef.iter_mut().enumerate() {
            *c = (0..k).map(|j| inv[g][j] * xty[j]).sum();
        }
        out.push(coef);
    }
    Ok((out, sample.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub lag: usize,
    pub group: String,
    pub injected: f64,
    pub truth: f64,
    pub estimate: f64,
    pub se: f64,
    /// `(estimate - truth) / se`.
    pub z: f64,
}

/// Compares the full-sample fits of a suite with the simulation targets.
pub fn recovery(truth: &Truth, fits: &[FitResult]) -> Result<Vec<RecoveryRow>> {
    let mut out = Vec::new();
    for fit in fits {
        if fit.levels.len() != 1 || fit.lag >= truth.pseudo_true.len() {
            return Err(Error::Domain("recovery needs the unsplit six-lag suite".into()));
        }
        for g in Group::ALL {
            let label = g.name().to_string();
            let estimate = fit.coef(&label)?;
            let se = fit.se(&label)?;
            let target = truth.pseudo_true[fit.lag][g.index()];
            out.push(RecoveryRow {
                lag: fit.lag,
                group: label,
                injected: truth.injected[fit.lag][g.index()],
                truth: target,
                estimate,
                se,
                z: (estimate - target) / se,
            });
        }
    }
    Ok(out)
}

/// Simulates, runs the pipeline in memory and compares all 36 group coefficients.
pub fn run_recovery(cfg: &DgpConfig) -> Result<Vec<RecoveryRow>> {
    let sim = simulate(cfg)?;
    let pcfg = cfg.pipeline_config();
    let cal = TradingCalendar::bundled();
    let (clean, _) = ingest(sim.raw, &pcfg, &cal)?;
    let sp = standardized_panel(&clean, &pcfg, &cal)?;
    let data = RegressionData::from_panel(&sp.panel, &sp.market, Dependent::DeltaN)?;
    let fits = run_spec_suite(&data, SubgroupDef::None, pcfg.small_sample_correction)?;
    recovery(&sim.truth, &fits)
}
