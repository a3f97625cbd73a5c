//! Extrapolation, asymmetry and speed proxies as linear combinations of fitted
//! group coefficients, with single-restriction Wald tests.
//!
//! Combinations across separate fits treat the fits as independent
//! (block-diagonal covariance).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::grouping::Group;
use crate::regression::{indicator_label, FitResult};

/// Lags of the speed proxy's fast and slow response.
pub const SPEED_FAST_LAG: usize = 1;
pub const SPEED_SLOW_LAG: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Proxy {
    Ext,
    Asy,
    SpeedExtNeg,
}

impl fmt::Display for Proxy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proxy::Ext => "Ext",
            Proxy::Asy => "Asy",
            Proxy::SpeedExtNeg => "SpeedExtNeg",
        })
    }
}

/// One evaluated combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyValue {
    pub proxy: Proxy,
    /// Subgroup level, or a contrast such as `OV minus ID`.
    pub level: String,
    pub lag: Option<usize>,
    pub value_bps: f64,
    pub std_error_bps: f64,
    pub wald_stat: f64,
    pub p_value: f64,
    pub stars: String,
}

/// A weighted coefficient of one fit in a list of fits.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub fit: usize,
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldResult {
    /// wᵀβ in natural units.
    pub value: f64,
    pub variance: f64,
    pub stat: f64,
    pub p_value: f64,
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// `(wᵀβ)² / (wᵀVw)` against chi-square(1); covariance between different fits is zero.
pub fn wald_linear(fits: &[&FitResult], terms: &[Term]) -> Result<WaldResult> {
    let mut resolved = Vec::with_capacity(terms.len());
    for t in terms {
        let fit = fits
            .get(t.fit)
            .ok_or_else(|| Error::Domain(format!("term refers to fit {} of {}", t.fit, fits.len())))?;
        resolved.push((t.fit, fit.index(&t.label)?, t.weight));
    }
    let mut value = 0.0;
    for &(f, j, w) in &resolved {
        value += w * fits[f].beta[j];
    }
    let mut variance = 0.0;
    for &(f, j, w) in &resolved {
        for &(g, q, v) in &resolved {
            if f == g {
                variance += w * v * fits[f].vcov[j][q];
            }
        }
    }
    if !(variance > 0.0) {
        return Err(Error::Domain(format!("non-positive variance {variance} of the linear combination")));
    }
    let stat = value * value / variance;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok(WaldResult { value, variance, stat, p_value: chi.sf(stat) })
}

fn value_of(proxy: Proxy, level: impl Into<String>, lag: Option<usize>, w: WaldResult) -> ProxyValue {
    ProxyValue {
        proxy,
        level: level.into(),
        lag,
        value_bps: w.value * 1e4,
        std_error_bps: w.variance.sqrt() * 1e4,
        wald_stat: w.stat,
        p_value: w.p_value,
        stars: stars(w.p_value).to_string(),
    }
}

fn level_index(fit: &FitResult, level: &str) -> Result<()> {
    if fit.levels.iter().any(|l| l == level) {
        Ok(())
    } else {
        Err(Error::MissingCoefficient(format!("level {level}")))
    }
}

fn label(fit: &FitResult, g: Group, level: &str) -> String {
    indicator_label(g, level, fit.levels.len())
}

/// Terms of the extrapolation proxy on fit `idx` at `level`.
pub fn ext_terms(fit: &FitResult, idx: usize, level: &str) -> Vec<Term> {
    [(Group::G1, 0.5), (Group::G6, 0.5), (Group::G3, -0.5), (Group::G4, -0.5)]
        .into_iter()
        .map(|(g, w)| Term { fit: idx, label: label(fit, g, level), weight: w })
        .collect()
}

pub fn asy_terms(fit: &FitResult, idx: usize, level: &str) -> Vec<Term> {
    [(Group::G1, 1.0), (Group::G6, -1.0)]
        .into_iter()
        .map(|(g, w)| Term { fit: idx, label: label(fit, g, level), weight: w })
        .collect()
}

/// Terms on fits `fast` (lag 1) and `slow` (lag 5).
pub fn speed_terms(fits: [&FitResult; 2], idx: [usize; 2], level: &str) -> Vec<Term> {
    vec![
        Term { fit: idx[0], label: label(fits[0], Group::G1, level), weight: 1.0 },
        Term { fit: idx[1], label: label(fits[1], Group::G1, level), weight: -1.0 },
    ]
}

pub fn ext_proxy(fit: &FitResult, level: &str) -> Result<ProxyValue> {
    level_index(fit, level)?;
    let w = wald_linear(&[fit], &ext_terms(fit, 0, level))?;
    Ok(value_of(Proxy::Ext, level, Some(fit.lag), w))
}

pub fn asy_proxy(fit: &FitResult, level: &str) -> Result<ProxyValue> {
    level_index(fit, level)?;
    let w = wald_linear(&[fit], &asy_terms(fit, 0, level))?;
    Ok(value_of(Proxy::Asy, level, Some(fit.lag), w))
}

fn check_same_suite(a: &FitResult, b: &FitResult) -> Result<()> {
    if a.levels != b.levels
        || a.subgroup != b.subgroup
        || a.frequency != b.frequency
        || a.dependent != b.dependent
        || a.n_obs != b.n_obs
    {
        return Err(Error::Domain("fits come from different suites".into()));
    }
    Ok(())
}

pub fn speed_ext_neg(fast: &FitResult, slow: &FitResult, level: &str) -> Result<ProxyValue> {
    check_same_suite(fast, slow)?;
    if fast.lag != SPEED_FAST_LAG || slow.lag != SPEED_SLOW_LAG {
        return Err(Error::Domain(format!(
            "speed proxy needs lags {SPEED_FAST_LAG} and {SPEED_SLOW_LAG}, got {} and {}",
            fast.lag, slow.lag
        )));
    }
    level_index(fast, level)?;
    let w = wald_linear(&[fast, slow], &speed_terms([fast, slow], [0, 1], level))?;
    Ok(value_of(Proxy::SpeedExtNeg, level, None, w))
}

fn by_lag(suite: &[FitResult], lag: usize) -> Result<&FitResult> {
    suite
        .iter()
        .find(|f| f.lag == lag)
        .ok_or_else(|| Error::MissingCoefficient(format!("fit at lag {lag}")))
}

/// Ext and Asy at every lag plus the speed proxy, for every level of the suite.
pub fn proxy_table(suite: &[FitResult]) -> Result<Vec<ProxyValue>> {
    let first = suite.first().ok_or_else(|| Error::InsufficientData("empty suite".into()))?;
    let mut out = Vec::new();
    for level in &first.levels {
        for fit in suite {
            out.push(ext_proxy(fit, level)?);
        }
        for fit in suite {
            out.push(asy_proxy(fit, level)?);
        }
        out.push(speed_ext_neg(by_lag(suite, SPEED_FAST_LAG)?, by_lag(suite, SPEED_SLOW_LAG)?, level)?);
    }
    Ok(out)
}

/// A contrast over levels: weight per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub name: String,
    pub weights: Vec<f64>,
}

/// `a minus b` for every pair, ordered as the subgroup's tables read.
pub fn pairwise_contrasts(subgroup: &str, levels: &[String]) -> Vec<Contrast> {
    let c = levels.len();
    let mut out = Vec::new();
    for i in 0..c {
        for j in i + 1..c {
            // size tables read larger minus smaller
            let (a, b) = if subgroup == "size" { (j, i) } else { (i, j) };
            let mut w = vec![0.0; c];
            w[a] = 1.0;
            w[b] = -1.0;
            out.push(Contrast { name: format!("{} minus {}", levels[a], levels[b]), weights: w });
        }
    }
    out
}

/// Each level against the unweighted mean of all other levels.
pub fn versus_others_contrasts(levels: &[String]) -> Vec<Contrast> {
    let c = levels.len();
    (0..c)
        .map(|i| {
            let mut w = vec![-1.0 / (c as f64 - 1.0); c];
            w[i] = 1.0;
            Contrast { name: format!("{} vs others", levels[i]), weights: w }
        })
        .collect()
}

fn contrast_terms(per_level: impl Fn(&str) -> Vec<Term>, levels: &[String], weights: &[f64]) -> Vec<Term> {
    let mut out = Vec::new();
    for (level, &cw) in levels.iter().zip(weights) {
        if cw == 0.0 {
            continue;
        }
        for mut t in per_level(level) {
            t.weight *= cw;
            out.push(t);
        }
    }
    out
}

/// Proxies evaluated on level contrasts: Ext and Asy at each lag, then speed.
pub fn compare_levels(suite: &[FitResult], contrasts: &[Contrast]) -> Result<Vec<ProxyValue>> {
    let first = suite.first().ok_or_else(|| Error::InsufficientData("empty suite".into()))?;
    let levels = &first.levels;
    if levels.len() < 2 {
        return Err(Error::Config("level comparisons need at least two levels".into()));
    }
    let fast = by_lag(suite, SPEED_FAST_LAG)?;
    let slow = by_lag(suite, SPEED_SLOW_LAG)?;
    check_same_suite(fast, slow)?;
    let mut out = Vec::new();
    for c in contrasts {
        if c.weights.len() != levels.len() {
            return Err(Error::Domain(format!("contrast {} has {} weights", c.name, c.weights.len())));
        }
        for fit in suite {
            let t = contrast_terms(|l| ext_terms(fit, 0, l), levels, &c.weights);
            out.push(value_of(Proxy::Ext, &c.name, Some(fit.lag), wald_linear(&[fit], &t)?));
        }
        for fit in suite {
            let t = contrast_terms(|l| asy_terms(fit, 0, l), levels, &c.weights);
            out.push(value_of(Proxy::Asy, &c.name, Some(fit.lag), wald_linear(&[fit], &t)?));
        }
        let t = contrast_terms(|l| speed_terms([fast, slow], [0, 1], l), levels, &c.weights);
        out.push(value_of(Proxy::SpeedExtNeg, &c.name, None, wald_linear(&[fast, slow], &t)?));
    }
    Ok(out)
}

/// The contrasts reported for a subgroup split.
pub fn default_contrasts(subgroup: &str, levels: &[String]) -> Vec<Contrast> {
    if subgroup == "sector" {
        versus_others_contrasts(levels)
    } else {
        pairwise_contrasts(subgroup, levels)
    }
}

/// `proxy,level,lag,value_bps,se_bps,wald_stat,p_value,stars`.
pub fn write_proxy_table(values: &[ProxyValue], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["proxy", "level", "lag", "value_bps", "se_bps", "wald_stat", "p_value", "stars"])?;
    for v in values {
        w.write_record([
            v.proxy.to_string(),
            v.level.clone(),
            v.lag.map(|l| l.to_string()).unwrap_or_default(),
            format!("{:.2}", v.value_bps),
            format!("{:.2}", v.std_error_bps),
            format!("{:.4}", v.wald_stat),
            format!("{:.4}", v.p_value),
            v.stars.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_proxy_json(values: &[ProxyValue], path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(values)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{coefficient_labels, Dependent, Frequency};

    fn fit(lag: usize, levels: &[&str], beta_ind: &[f64]) -> FitResult {
        let levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        let labels = coefficient_labels(&levels, lag);
        let k = labels.len();
        let mut beta = beta_ind.to_vec();
        beta.resize(k, 0.0);
        FitResult {
            lag,
            subgroup: "kind".into(),
            levels,
            frequency: Frequency::HighFreq,
            dependent: Dependent::DeltaN,
            labels,
            beta,
            vcov: (0..k).map(|i| (0..k).map(|j| if i == j { 1e-6 } else { 0.0 }).collect()).collect(),
            adj_r2: 0.0,
            n_obs: 100,
            n_clusters: 10,
            rss: 1.0,
            tss: 1.0,
            small_sample_correction: true,
            dropped_missing_lags: 0,
            dropped_incomplete: 0,
            dropped_unlabeled: 0,
        }
    }

    #[test]
    fn toy_wald() {
        let mut f = fit(0, &["all"], &[2.0, 1.0]);
        f.vcov[0][0] = 1.0;
        f.vcov[1][1] = 1.0;
        let w = wald_linear(
            &[&f],
            &[
                Term { fit: 0, label: "G1".into(), weight: 1.0 },
                Term { fit: 0, label: "G2".into(), weight: -1.0 },
            ],
        )
        .unwrap();
        assert!((w.stat - 0.5).abs() < 1e-15);
        // 2 * (1 - Phi(sqrt 0.5))
        assert!((w.p_value - 0.4795001221869535).abs() < 1e-9, "{}", w.p_value);
    }

    #[test]
    fn single_coefficient_stat_is_t_squared() {
        let mut f = fit(2, &["all"], &[0.003, 0.001]);
        f.vcov[0][0] = 4e-6;
        let w = wald_linear(&[&f], &[Term { fit: 0, label: "G1".into(), weight: 1.0 }]).unwrap();
        let t = f.t_stat("G1").unwrap();
        assert!((w.stat - t * t).abs() < 1e-12);
    }

    #[test]
    fn symmetric_inputs_give_zero() {
        let f = fit(1, &["all"], &[0.01, 0.0, 0.01, 0.01, 0.0, 0.01]);
        let e = ext_proxy(&f, "all").unwrap();
        assert_eq!(e.value_bps, 0.0);
        assert_eq!(e.p_value, 1.0);
        assert_eq!(asy_proxy(&f, "all").unwrap().value_bps, 0.0);
        let slow = fit(5, &["all"], &[0.01]);
        assert_eq!(speed_ext_neg(&f, &slow, "all").unwrap().value_bps, 0.0);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let mut f = fit(1, &["all"], &[0.01]);
        f.vcov[0][0] = 0.0;
        f.vcov[5][5] = 0.0;
        assert!(asy_proxy(&f, "all").is_err());
    }

    #[test]
    fn missing_level_and_mismatched_suites() {
        let f = fit(1, &["all"], &[0.01]);
        assert!(matches!(ext_proxy(&f, "OV"), Err(Error::MissingCoefficient(_))));
        let mut slow = fit(5, &["all"], &[0.01]);
        slow.n_obs = 99;
        assert!(speed_ext_neg(&f, &slow, "all").is_err());
        assert!(speed_ext_neg(&f, &fit(4, &["all"], &[0.0]), "all").is_err());
    }

    #[test]
    fn star_breakpoints() {
        assert_eq!(stars(0.0099), "***");
        assert_eq!(stars(0.01), "**");
        assert_eq!(stars(0.05), "*");
        assert_eq!(stars(0.10), "");
        let ps = [0.0, 0.005, 0.01, 0.03, 0.05, 0.07, 0.1, 0.5, 1.0];
        let n: Vec<usize> = ps.iter().map(|&p| stars(p).len()).collect();
        assert!(n.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn contrasts() {
        let levels: Vec<String> = crate::ingest::Sector::GICS.iter().map(|s| s.label().to_string()).collect();
        for c in versus_others_contrasts(&levels) {
            assert!(c.weights.iter().sum::<f64>().abs() < 1e-12);
            assert!(c.weights.iter().filter(|&&w| (w + 0.1).abs() < 1e-15).count() == 10);
        }
        let size: Vec<String> = ["S", "M", "L"].iter().map(|s| s.to_string()).collect();
        let names: Vec<String> = pairwise_contrasts("size", &size).into_iter().map(|c| c.name).collect();
        assert_eq!(names, ["M minus S", "L minus S", "L minus M"]);
        let kind: Vec<String> = ["OV", "ID"].iter().map(|s| s.to_string()).collect();
        assert_eq!(pairwise_contrasts("kind", &kind)[0].name, "OV minus ID");
    }

    #[test]
    fn identical_levels_differ_by_zero() {
        let b = [0.02, 0.01, 0.003, 0.002, 0.004, 0.01];
        let both: Vec<f64> = b.iter().chain(b.iter()).copied().collect();
        let suite: Vec<FitResult> = (0..6).map(|l| fit(l, &["OV", "ID"], &both)).collect();
        let levels = suite[0].levels.clone();
        let rows = compare_levels(&suite, &pairwise_contrasts("kind", &levels)).unwrap();
        assert_eq!(rows.len(), 13);
        assert!(rows.iter().all(|r| r.value_bps.abs() < 1e-12));
    }

    #[test]
    fn contrast_uses_within_fit_covariance() {
        let b: Vec<f64> = (0..12).map(|i| 0.001 * i as f64).collect();
        let mut suite: Vec<FitResult> = (0..6).map(|l| fit(l, &["OV", "ID"], &b)).collect();
        suite[1].vcov[0][6] = 5e-7;
        suite[1].vcov[6][0] = 5e-7;
        let levels = suite[1].levels.clone();
        let rows = compare_levels(&suite, &pairwise_contrasts("kind", &levels)).unwrap();
        let asy1 = rows.iter().find(|r| r.proxy == Proxy::Asy && r.lag == Some(1)).unwrap();
        // w = (1 on G1:OV, -1 on G6:OV, -1 on G1:ID, +1 on G6:ID): 4e-6 - 2 * 5e-7
        assert!((asy1.std_error_bps - (3e-6f64).sqrt() * 1e4).abs() < 1e-9);
        assert!((asy1.value_bps - (0.0 - 0.005 - 0.006 + 0.011) * 1e4).abs() < 1e-9);
    }

    #[test]
    fn interacted_single_level_matches_plain_labels() {
        let b = [0.0100, 0.003, 0.0025, 0.0024, 0.002, 0.004];
        let plain = fit(1, &["all"], &b);
        let e = ext_proxy(&plain, "all").unwrap();
        let w: f64 = 0.5 * (b[0] + b[5]) - 0.5 * (b[2] + b[3]);
        assert_eq!(e.value_bps, w * 1e4);
    }
}
