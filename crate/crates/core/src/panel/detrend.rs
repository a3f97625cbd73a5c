use crate::error::{Error, Result};
use crate::ingest::Observation;
use crate::stats::CompensatedSum;

use super::{minutes_between, scaling_factor, ObsKind};

/// Residuals of a least-squares line of `levels` on `times`.
pub fn detrend_levels(times: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if times.len() != levels.len() {
        return Err(Error::Domain("times and levels differ in length".into()));
    }
    if times.len() < 2 {
        return Err(Error::InsufficientData("detrending needs at least two points".into()));
    }
    let n = times.len() as f64;
    let t_mean = times.iter().copied().collect::<CompensatedSum>().value() / n;
    let y_mean = levels.iter().copied().collect::<CompensatedSum>().value() / n;
    let mut stt = CompensatedSum::new();
    let mut sty = CompensatedSum::new();
    for (&t, &y) in times.iter().zip(levels) {
        let dt = t - t_mean;
        stt.add(dt * dt);
        sty.add(dt * (y - y_mean));
    }
    let stt = stt.value();
    if stt <= f64::EPSILON * t_mean.abs().max(1.0) * n {
        return Err(Error::Domain("degenerate time index: all timestamps equal".into()));
    }
    let slope = sty.value() / stt;
    Ok(times
        .iter()
        .zip(levels)
        .map(|(&t, &y)| y - y_mean - slope * (t - t_mean))
        .collect())
}

/// Changes of the detrended `log(n + 1)` series between consecutive observations,
/// scaled to daily units exactly like raw position openings.
///
/// Time is measured in fractional calendar days from the first observation.
pub fn detrended_changes(obs: &[Observation]) -> Result<Vec<f64>> {
    let Some(first) = obs.first() else {
        return Ok(Vec::new());
    };
    let times: Vec<f64> = obs
        .iter()
        .map(|o| minutes_between(first.at, o.at) / 1440.0)
        .collect();
    let levels: Vec<f64> = obs.iter().map(|o| (o.holders as f64 + 1.0).ln()).collect();
    let resid = detrend_levels(&times, &levels)?;
    obs.windows(2)
        .zip(resid.windows(2))
        .map(|(o, r)| {
            let (kind, mnt) = if o[0].at.date() == o[1].at.date() {
                (ObsKind::Intraday, minutes_between(o[0].at, o[1].at))
            } else {
                (ObsKind::Overnight, 0.0)
            };
            match scaling_factor(kind, mnt) {
                Ok(sf) => Ok((r[1] - r[0]) * sf),
                // spacing violations are dropped by the panel builder anyway
                Err(_) => Ok(f64::NAN),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    #[test]
    fn linear_series_detrends_to_zero() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|x| 2.0 + 0.7 * x).collect();
        for r in detrend_levels(&t, &y).unwrap() {
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn residuals_sum_to_zero_with_zero_slope() {
        let t: Vec<f64> = (0..50).map(|i| (i as f64).powf(1.3)).collect();
        let y: Vec<f64> = t.iter().map(|x| (x * 0.37).sin() + 0.01 * x).collect();
        let r = detrend_levels(&t, &y).unwrap();
        let s: f64 = r.iter().sum();
        assert!(s.abs() < 1e-9 * y.iter().map(|v| v.abs()).sum::<f64>());
        // residuals carry no remaining trend
        let tm = t.iter().sum::<f64>() / t.len() as f64;
        let slope_num: f64 = t.iter().zip(&r).map(|(a, b)| (a - tm) * b).sum();
        let slope_den: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
        assert!((slope_num / slope_den).abs() < 1e-10);
    }

    #[test]
    fn injected_deviations_are_recovered() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 / 7.0).collect();
        // deviations orthogonalised against (1, t) so the line fit cannot absorb them
        let raw: Vec<f64> = (0..40).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.01).collect();
        let n = t.len() as f64;
        let tm = t.iter().sum::<f64>() / n;
        let dm = raw.iter().sum::<f64>() / n;
        let b = t.iter().zip(&raw).map(|(a, d)| (a - tm) * (d - dm)).sum::<f64>()
            / t.iter().map(|a| (a - tm) * (a - tm)).sum::<f64>();
        let dev: Vec<f64> = t.iter().zip(&raw).map(|(a, d)| d - dm - b * (a - tm)).collect();
        let y: Vec<f64> = t.iter().zip(&dev).map(|(a, d)| 5.0 - 0.02 * a + d).collect();
        let r = detrend_levels(&t, &y).unwrap();
        for (got, want) in r.iter().zip(&dev) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(detrend_levels(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(detrend_levels(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn changes_on_steady_growth_are_zero() {
        let start = NaiveDate::from_ymd_opt(2019, 6, 3).unwrap().and_hms_opt(9, 45, 0).unwrap();
        // holders grow at a constant log rate per calendar minute
        let obs: Vec<Observation> = (0..7)
            .map(|h| {
                let at = start + Duration::hours(h);
                let m = (at - start).num_minutes() as f64;
                Observation { at, holders: ((1e7f64).ln() + 1e-4 * m).exp().round() as u64 - 1 }
            })
            .collect();
        for c in detrended_changes(&obs).unwrap() {
            // only integer rounding of the counts remains
            assert!(c.abs() < 1e-5, "{c}");
        }
    }
}
