use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::stats;

use super::{ObsKind, Panel, PanelObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub nobs: usize,
    pub n_days: usize,
    pub n_stocks: usize,
}

/// Mean, standard deviation and the 5/25/50/75/95 percentiles of `values`.
pub fn summarize(label: &str, values: &[f64], n_days: usize, n_stocks: usize) -> SummaryRow {
    let (mean, std, q) = if values.is_empty() {
        (f64::NAN, f64::NAN, vec![f64::NAN; 5])
    } else {
        (
            stats::mean(values),
            stats::std_dev(values),
            stats::quantiles(values, &[0.05, 0.25, 0.5, 0.75, 0.95]),
        )
    };
    SummaryRow {
        label: label.to_string(),
        mean,
        std,
        p5: q[0],
        p25: q[1],
        p50: q[2],
        p75: q[3],
        p95: q[4],
        nobs: values.len(),
        n_days,
        n_stocks,
    }
}

/// Intraday / overnight / all rows of a panel variable, multiplied by `scale`
/// (1e4 reports daily log units in basis points).
pub fn summary_table(panel: &Panel, value: impl Fn(&PanelObservation) -> f64, scale: f64) -> Vec<SummaryRow> {
    let subsets: [(&str, Option<ObsKind>); 3] = [
        ("Intraday", Some(ObsKind::Intraday)),
        ("Overnight", Some(ObsKind::Overnight)),
        ("All", None),
    ];
    subsets
        .iter()
        .map(|(label, kind)| {
            let rows: Vec<&PanelObservation> = panel
                .rows
                .iter()
                .filter(|r| kind.is_none_or(|k| r.kind == k))
                .filter(|r| value(r).is_finite())
                .collect();
            let values: Vec<f64> = rows.iter().map(|r| value(r) * scale).collect();
            let days: BTreeSet<_> = rows.iter().map(|r| r.day).collect();
            let stocks: BTreeSet<_> = rows.iter().map(|r| r.stock).collect();
            summarize(label, &values, days.len(), stocks.len())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_series() {
        let s = summarize("c", &[2.5; 40], 1, 1);
        assert_eq!(s.std, 0.0);
        for q in [s.p5, s.p25, s.p50, s.p75, s.p95] {
            assert_eq!(q, 2.5);
        }
    }

    #[test]
    fn normal_fifth_percentile() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summarize("n", &xs, 1, 1);
        assert!((s.p5 + 1.645).abs() < 0.01, "{}", s.p5);
        assert!((s.p95 - 1.645).abs() < 0.01, "{}", s.p95);
        assert!((s.std - 1.0).abs() < 0.01);
    }
}
