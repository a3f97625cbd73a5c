//! Figure data and delimited summary tables.
//!
//! Figures are written as long-format data (`level,x,series,y_bps,se_bps`)
//! for any plotting tool.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::regression::{indicator_label, FitResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigurePoint {
    pub level: String,
    pub x: String,
    pub series: String,
    pub y_bps: f64,
    pub se_bps: f64,
}

fn point(fit: &FitResult, g: Group, level: &str, x: String, series: String) -> Result<FigurePoint> {
    let label = indicator_label(g, level, fit.levels.len());
    Ok(FigurePoint {
        level: level.to_string(),
        x,
        series,
        y_bps: fit.coef(&label)? * 1e4,
        se_bps: fit.se(&label)? * 1e4,
    })
}

fn check_suite(suite: &[FitResult]) -> Result<&FitResult> {
    let first = suite.first().ok_or_else(|| Error::InsufficientData("empty suite".into()))?;
    if suite.iter().any(|f| f.levels != first.levels) {
        return Err(Error::Domain("fits come from different suites".into()));
    }
    Ok(first)
}

/// Group coefficients with the return group on the x axis, one series per lag.
pub fn by_group(suite: &[FitResult]) -> Result<Vec<FigurePoint>> {
    let first = check_suite(suite)?;
    let mut out = Vec::new();
    for level in &first.levels {
        for fit in suite {
            for g in Group::ALL {
                out.push(point(fit, g, level, g.interval_label().to_string(), format!("L={}", fit.lag))?);
            }
        }
    }
    Ok(out)
}

/// Group coefficients with the lag on the x axis, one series per return group.
pub fn by_lag(suite: &[FitResult]) -> Result<Vec<FigurePoint>> {
    let first = check_suite(suite)?;
    let mut out = Vec::new();
    for level in &first.levels {
        for g in Group::ALL {
            for fit in suite {
                out.push(point(fit, g, level, fit.lag.to_string(), g.interval_label().to_string())?);
            }
        }
    }
    Ok(out)
}

/// Writes serializable rows as a headed CSV file.
pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{coefficient_labels, Dependent, Frequency};

    fn fit(lag: usize, levels: &[&str]) -> FitResult {
        let levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        let labels = coefficient_labels(&levels, lag);
        let k = labels.len();
        FitResult {
            lag,
            subgroup: "x".into(),
            levels,
            frequency: Frequency::HighFreq,
            dependent: Dependent::DeltaN,
            labels,
            beta: (0..k).map(|i| (i + 10 * lag) as f64 * 1e-4).collect(),
            vcov: (0..k).map(|i| (0..k).map(|j| if i == j { 1e-8 } else { 0.0 }).collect()).collect(),
            adj_r2: 0.0,
            n_obs: 10,
            n_clusters: 2,
            rss: 1.0,
            tss: 1.0,
            small_sample_correction: true,
            dropped_missing_lags: 0,
            dropped_incomplete: 0,
            dropped_unlabeled: 0,
        }
    }

    #[test]
    fn shapes_and_values() {
        let suite: Vec<FitResult> = (0..6).map(|l| fit(l, &["all"])).collect();
        let g = by_group(&suite).unwrap();
        let l = by_lag(&suite).unwrap();
        assert_eq!(g.len(), 36);
        assert_eq!(l.len(), 36);
        // G2 at lag 3 is column 1 of the lag-3 fit
        let p = g.iter().find(|p| p.series == "L=3" && p.x == Group::G2.interval_label()).unwrap();
        assert!((p.y_bps - 31.0).abs() < 1e-9);
        assert!((p.se_bps - 1.0).abs() < 1e-9);
        let q = l.iter().find(|p| p.x == "3" && p.series == Group::G2.interval_label()).unwrap();
        assert_eq!(p.y_bps, q.y_bps);
    }

    #[test]
    fn mixed_suites_are_rejected() {
        let suite = vec![fit(0, &["all"]), fit(1, &["OV", "ID"])];
        assert!(by_group(&suite).is_err());
    }
}
