//! Run configuration, read from a `key = value` text file.
//!
//! ```text
//! delay_minutes = 45
//! sample_start = "2018-06-01"
//! sample_end = "2020-08-13"
//! near_hour_epsilon_minutes = 2
//! exclusions = "exclusions.csv"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::validate_delay;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Reporting delay subtracted from snapshot retrieval times (30, 45 or 60).
    pub delay_minutes: i64,
    /// Observations before this date are dropped (the warm-up month).
    pub sample_start: NaiveDate,
    pub sample_end: Option<NaiveDate>,
    /// Tolerance of the "close to a full hour" duplicate rule.
    pub near_hour_epsilon_minutes: i64,
    /// Required observations per full-length stock-day; scaled down on early closes.
    pub min_points_per_day: usize,
    /// Stocks with a run of missing trading days longer than this are dropped.
    pub max_gap_trading_days: usize,
    /// Minimum overnight returns for the GJR-GARCH fit.
    pub min_volatility_obs: usize,
    pub market_ticker: String,
    pub winsor_lower_pct: f64,
    pub winsor_upper_pct: f64,
    /// Apply G/(G-1) x (N-1)/(N-K) to the clustered covariance.
    pub small_sample_correction: bool,
    /// Optional `ticker,action,start,end` exclusion / truncation list.
    pub exclusions: Option<PathBuf>,
    /// Optional `alias,ticker` renaming table.
    pub aliases: Option<PathBuf>,
    /// Optional `code,venue` exchange-code table.
    pub venues: Option<PathBuf>,
    /// Optional `date,kind` trading calendar replacing the bundled one.
    pub calendar: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delay_minutes: 45,
            sample_start: NaiveDate::from_ymd_opt(2018, 6, 1).unwrap(),
            sample_end: None,
            near_hour_epsilon_minutes: 2,
            min_points_per_day: 6,
            max_gap_trading_days: 7,
            min_volatility_obs: 240,
            market_ticker: "SPY".to_string(),
            winsor_lower_pct: 0.5,
            winsor_upper_pct: 99.5,
            small_sample_correction: true,
            exclusions: None,
            aliases: None,
            venues: None,
            calendar: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.exclusions, &mut cfg.aliases, &mut cfg.venues, &mut cfg.calendar]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        validate_delay(self.delay_minutes)?;
        if self.near_hour_epsilon_minutes < 0 {
            return Err(Error::Config("near_hour_epsilon_minutes must be >= 0".into()));
        }
        if !(0.0..50.0).contains(&self.winsor_lower_pct)
            || !(50.0..=100.0).contains(&self.winsor_upper_pct)
        {
            return Err(Error::Config("winsorization percentiles out of range".into()));
        }
        if let Some(end) = self.sample_end {
            if end < self.sample_start {
                return Err(Error::Config("sample_end precedes sample_start".into()));
            }
        }
        if self.market_ticker.is_empty() {
            return Err(Error::Config("market_ticker must be non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_values() {
        let cfg = PipelineConfig::parse(
            "delay_minutes = 30\nsample_start = \"2019-01-02\"\nnear_hour_epsilon_minutes = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.delay_minutes, 30);
        assert_eq!(cfg.near_hour_epsilon_minutes, 3);
        assert_eq!(cfg.min_volatility_obs, 240);
    }

    #[test]
    fn rejects_bad_delay_and_unknown_keys() {
        assert!(PipelineConfig::parse("delay_minutes = 0").is_err());
        assert!(PipelineConfig::parse("dealy_minutes = 45").is_err());
    }

    #[test]
    fn text_round_trip() {
        let cfg = PipelineConfig {
            exclusions: Some("ex.csv".into()),
            ..Default::default()
        };
        assert_eq!(PipelineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
