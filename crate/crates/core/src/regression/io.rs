//! Fit tables (basis points) and the exact structured form.

use std::path::Path;

use crate::error::{Error, Result};

use super::FitResult;

/// Coefficient rows of every fit: `lag,label,beta_bps,se_bps,t_stat`.
pub fn write_fit_table(fits: &[FitResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["lag", "label", "beta_bps", "se_bps", "t_stat"])?;
    for f in fits {
        for (j, label) in f.labels.iter().enumerate() {
            let se = f.vcov[j][j].sqrt();
            w.write_record([
                f.lag.to_string(),
                label.clone(),
                format!("{:.4}", f.beta[j] * 1e4),
                format!("{:.4}", se * 1e4),
                format!("{:.4}", f.beta[j] / se),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-fit statistics: `lag,n_obs,n_clusters,adj_r2,dropped_missing_lags,dropped_unlabeled`.
pub fn write_fit_summary(fits: &[FitResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(["lag", "n_obs", "n_clusters", "adj_r2", "dropped_missing_lags", "dropped_unlabeled"])?;
    for f in fits {
        w.write_record([
            f.lag.to_string(),
            f.n_obs.to_string(),
            f.n_clusters.to_string(),
            format!("{:.6}", f.adj_r2),
            f.dropped_missing_lags.to_string(),
            f.dropped_unlabeled.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_fits_json(fits: &[FitResult], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(fits)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_fits_json(path: &Path) -> Result<Vec<FitResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
