use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Tick;

pub const GRID_SPACING_MINUTES: i64 = 5;
pub const GRID_OFFSETS: i64 = 5;

/// Subsampled realized volatility of one stock-day, in full-day units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvDay {
    pub sigma: f64,
    /// Grid returns summed over all usable offsets.
    pub n_grid_returns: usize,
}

/// Realized variance on the grid `open + offset + k * spacing <= close`, using the
/// last tick at or before each grid point. Grid points before the first tick
/// are skipped; `None` when fewer than two points are priced.
pub fn grid_realized_variance(
    ticks: &[Tick],
    open: NaiveDateTime,
    close: NaiveDateTime,
    offset: Duration,
    spacing: Duration,
) -> Option<(f64, usize)> {
    let mut t = open + offset;
    let mut prev: Option<f64> = None;
    let mut rv = 0.0;
    let mut n = 0usize;
    let mut i = 0usize;
    while t <= close {
        while i < ticks.len() && ticks[i].at <= t {
            i += 1;
        }
        if i > 0 {
            let p = ticks[i - 1].price;
            if let Some(q) = prev {
                let r = (p / q).ln();
                rv += r * r;
                n += 1;
            }
            prev = Some(p);
        }
        t += spacing;
    }
    (n > 0).then_some((rv, n))
}

/// Per-offset realized variances of the five staggered 5-minute grids.
pub fn offset_variances(ticks: &[Tick], open: NaiveDateTime, close: NaiveDateTime) -> Vec<(f64, usize)> {
    (0..GRID_OFFSETS)
        .filter_map(|o| {
            grid_realized_variance(
                ticks,
                open,
                close,
                Duration::minutes(o),
                Duration::minutes(GRID_SPACING_MINUTES),
            )
        })
        .collect()
}

/// Average of the offset-grid realized variances, square-rooted and scaled by √2
/// from the trading session to a full day. `ticks` must be sorted by time.
pub fn realized_vol_subsampled(ticks: &[Tick], open: NaiveDateTime, close: NaiveDateTime) -> Result<RvDay> {
    let grids = offset_variances(ticks, open, close);
    if grids.is_empty() {
        return Err(Error::InsufficientData(format!(
            "inestimable day {}: fewer than two priced grid points",
            open.date()
        )));
    }
    let avg = grids.iter().map(|g| g.0).sum::<f64>() / grids.len() as f64;
    Ok(RvDay {
        sigma: avg.sqrt() * std::f64::consts::SQRT_2,
        n_grid_returns: grids.iter().map(|g| g.1).sum(),
    })
}
