use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Exchange-code to venue mapping; ticks are kept only on the retained venues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueTable {
    pub codes: BTreeMap<String, String>,
    pub retained: Vec<String>,
}

impl Default for VenueTable {
    fn default() -> Self {
        let codes = [
            ("N", "NYSE"),
            ("Q", "NASDAQ"),
            ("T", "NASDAQ"),
            ("A", "AMEX"),
            ("P", "ARCA"),
            ("Z", "BATS"),
            ("Y", "BATS"),
            ("K", "EDGX"),
            ("J", "EDGA"),
            ("B", "BX"),
            ("X", "PSX"),
            ("C", "NSX"),
            ("M", "CHX"),
            ("D", "FINRA"),
            ("I", "ISE"),
            ("V", "IEX"),
        ]
        .into_iter()
        .map(|(c, v)| (c.to_string(), v.to_string()))
        .collect();
        Self {
            codes,
            retained: vec!["NYSE".into(), "NASDAQ".into(), "AMEX".into()],
        }
    }
}

impl VenueTable {
    /// Builds a table from `code,venue` pairs, keeping the default retained set.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            codes: pairs.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn is_retained(&self, code: &str) -> bool {
        self.codes
            .get(code)
            .is_some_and(|venue| self.retained.iter().any(|r| r == venue))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionAction {
    /// Drop the stock entirely.
    Exclude,
    /// Keep only observations dated within [start, end].
    Truncate,
}

/// One manual anomaly treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub ticker: String,
    pub action: ExclusionAction,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

impl Exclusion {
    pub fn keeps(&self, date: NaiveDate) -> bool {
        match self.action {
            ExclusionAction::Exclude => false,
            ExclusionAction::Truncate => {
                self.start.is_none_or(|s| date >= s) && self.end.is_none_or(|e| date <= e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_venues() {
        let v = VenueTable::default();
        assert!(v.is_retained("N"));
        assert!(v.is_retained("Q"));
        assert!(v.is_retained("A"));
        assert!(!v.is_retained("P"));
        assert!(!v.is_retained("?"));
    }

    #[test]
    fn truncation_window() {
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let ex = Exclusion {
            ticker: "X".into(),
            action: ExclusionAction::Truncate,
            start: None,
            end: Some(d("2019-03-01")),
        };
        assert!(ex.keeps(d("2019-03-01")));
        assert!(!ex.keeps(d("2019-03-02")));
    }
}
