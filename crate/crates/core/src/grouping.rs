//! Pooled percentile cutoffs and the six return groups.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DailyPanel, Panel};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    G1,
    G2,
    G3,
    G4,
    G5,
    G6,
}

impl Group {
    pub const ALL: [Group; 6] = [Group::G1, Group::G2, Group::G3, Group::G4, Group::G5, Group::G6];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Group> {
        Group::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        ["G1", "G2", "G3", "G4", "G5", "G6"][self.index()]
    }

    /// Percentile range of the group as printed in tables.
    pub fn interval_label(self) -> &'static str {
        ["<5%", "[5%,25%)", "[25%,0)", "[0,75%)", "[75%,95%)", ">=95%"][self.index()]
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Percentile cutoffs of the pooled standardized returns; zero is the fixed
/// boundary between G3 and G4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCutoffs {
    pub q5: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

impl GroupCutoffs {
    pub const ZERO: f64 = 0.0;

    /// Whether `q5 <= q25 <= 0 <= q75 <= q95`, which holds when zero sits near the median.
    pub fn is_ordered_around_zero(&self) -> bool {
        self.q5 <= self.q25 && self.q25 <= 0.0 && 0.0 <= self.q75 && self.q75 <= self.q95
    }
}

/// Linear-interpolation 5/25/75/95 percentiles over every finite value.
pub fn compute_cutoffs(std_returns: &[f64]) -> Result<GroupCutoffs> {
    let finite: Vec<f64> = std_returns.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::InsufficientData("no finite standardized returns for cutoffs".into()));
    }
    let q = stats::quantiles(&finite, &[0.05, 0.25, 0.75, 0.95]);
    Ok(GroupCutoffs { q5: q[0], q25: q[1], q75: q[2], q95: q[3] })
}

pub fn assign_group(r: f64, c: &GroupCutoffs) -> Result<Group> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("cannot group non-finite return {r}")));
    }
    Ok(if r < c.q5 {
        Group::G1
    } else if r < c.q25 {
        Group::G2
    } else if r < GroupCutoffs::ZERO {
        Group::G3
    } else if r < c.q75 {
        Group::G4
    } else if r < c.q95 {
        Group::G5
    } else {
        Group::G6
    })
}

/// Group populations of `values` in G1..G6 order.
pub fn group_counts(values: &[f64], c: &GroupCutoffs) -> Result<[usize; 6]> {
    let mut counts = [0usize; 6];
    for &v in values {
        counts[assign_group(v, c)?.index()] += 1;
    }
    Ok(counts)
}

/// Freezes cutoffs on every standardized return of the panel (intraday and
/// overnight pooled) and labels each row.
pub fn group_panel(panel: &mut Panel) -> Result<GroupCutoffs> {
    let values: Vec<f64> = panel.rows.iter().map(|r| r.std_return).collect();
    let c = compute_cutoffs(&values)?;
    for r in &mut panel.rows {
        r.group = Some(assign_group(r.std_return, &c)?);
    }
    Ok(c)
}

/// Daily-frequency counterpart of [`group_panel`], with its own cutoffs.
pub fn group_daily_panel(panel: &mut DailyPanel) -> Result<GroupCutoffs> {
    let values: Vec<f64> = panel.rows.iter().map(|r| r.std_return_daily).collect();
    let c = compute_cutoffs(&values)?;
    for r in &mut panel.rows {
        r.group = Some(assign_group(r.std_return_daily, &c)?);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_cutoffs() -> GroupCutoffs {
        GroupCutoffs { q5: -5.14, q25: -1.69, q75: 1.69, q95: 5.03 }
    }

    #[test]
    fn table_examples() {
        let c = table_cutoffs();
        assert_eq!(assign_group(-6.0, &c).unwrap(), Group::G1);
        assert_eq!(assign_group(0.0, &c).unwrap(), Group::G4);
        assert_eq!(assign_group(-0.01, &c).unwrap(), Group::G3);
        assert_eq!(assign_group(-5.14, &c).unwrap(), Group::G2);
        assert_eq!(assign_group(5.03, &c).unwrap(), Group::G6);
        assert_eq!(assign_group(-1.69, &c).unwrap(), Group::G3);
        assert_eq!(assign_group(1.69, &c).unwrap(), Group::G5);
        assert!(assign_group(f64::NAN, &c).is_err());
    }

    #[test]
    fn standardized_return_lands_in_bottom_group() {
        let r: f64 = -0.1287 / 0.025;
        assert!((r + 5.148).abs() < 1e-12);
        assert_eq!(assign_group(r, &table_cutoffs()).unwrap(), Group::G1);
    }

    #[test]
    fn symmetric_sample_quartiles() {
        let xs: Vec<f64> = (0..1000).flat_map(|_| [-2.0, -1.0, 0.0, 1.0, 2.0]).collect();
        let c = compute_cutoffs(&xs).unwrap();
        assert_eq!(c.q25, -1.0);
        assert_eq!(c.q75, 1.0);
        assert!(c.is_ordered_around_zero());
    }

    #[test]
    fn all_zero_sample() {
        let c = compute_cutoffs(&[0.0; 17]).unwrap();
        assert_eq!((c.q5, c.q25, c.q75, c.q95), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(assign_group(0.0, &c).unwrap(), Group::G6);
        assert!(compute_cutoffs(&[]).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_tails(xs in prop::collection::vec(-50.0f64..50.0, 20..400)) {
            let c = compute_cutoffs(&xs).unwrap();
            let counts = group_counts(&xs, &c).unwrap();
            prop_assert_eq!(counts.iter().sum::<usize>(), xs.len());
            // continuous draws: no ties, so the tail counts follow the interpolation position
            let n = xs.len() as f64;
            prop_assert!((counts[0] as f64 - 0.05 * n).abs() <= 1.0);
            prop_assert!((counts[5] as f64 - 0.05 * n).abs() <= 1.0);
        }

        #[test]
        fn assignment_is_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0, q in prop::array::uniform4(0.0f64..10.0)) {
            let c = GroupCutoffs { q5: -q[0] - q[1], q25: -q[1], q75: q[2], q95: q[2] + q[3] };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(assign_group(lo, &c).unwrap() <= assign_group(hi, &c).unwrap());
        }
    }
}
