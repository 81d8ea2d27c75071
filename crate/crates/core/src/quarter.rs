//! Calendar quarters as totally ordered analysis cutoffs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A calendar quarter, e.g. `2016Q1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuarterIndex {
    year: i32,
    quarter: u8,
}

impl QuarterIndex {
    pub fn new(year: i32, quarter: u8) -> Option<Self> {
        (1..=4)
            .contains(&quarter)
            .then_some(QuarterIndex { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    /// Number of quarters since year 0, Q1.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 4 + i64::from(self.quarter - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(4) as i32;
        let quarter = ordinal.rem_euclid(4) as u8 + 1;
        QuarterIndex { year, quarter }
    }

    /// Signed difference `self - other` in quarters.
    pub fn diff(self, other: QuarterIndex) -> i64 {
        self.ordinal() - other.ordinal()
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }

    /// All quarters from `first` to `last`, both inclusive. Empty when `last < first`.
    pub fn range_inclusive(first: QuarterIndex, last: QuarterIndex) -> Vec<QuarterIndex> {
        (first.ordinal()..=last.ordinal())
            .map(Self::from_ordinal)
            .collect()
    }
}

impl fmt::Display for QuarterIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseQuarterError(pub String);

impl fmt::Display for ParseQuarterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid quarter `{}` (expected YYYYQn)", self.0)
    }
}

impl std::error::Error for ParseQuarterError {}

impl FromStr for QuarterIndex {
    type Err = ParseQuarterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseQuarterError(s.to_string());
        let (year, quarter) = s.trim().split_once(['Q', 'q']).ok_or_else(err)?;
        if year.len() != 4 || quarter.len() != 1 {
            return Err(err());
        }
        let year: i32 = year.parse().map_err(|_| err())?;
        let quarter: u8 = quarter.parse().map_err(|_| err())?;
        QuarterIndex::new(year, quarter).ok_or_else(err)
    }
}

impl Serialize for QuarterIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QuarterIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let q: QuarterIndex = "2016Q3".parse().unwrap();
        assert_eq!(q, QuarterIndex::new(2016, 3).unwrap());
        assert_eq!(q.to_string(), "2016Q3");
        assert!("2016Q5".parse::<QuarterIndex>().is_err());
        assert!("16Q1".parse::<QuarterIndex>().is_err());
        assert!("2016-1".parse::<QuarterIndex>().is_err());
    }

    #[test]
    fn ordering_and_arithmetic() {
        let a: QuarterIndex = "2016Q4".parse().unwrap();
        let b: QuarterIndex = "2017Q1".parse().unwrap();
        assert!(a < b);
        assert_eq!(a.next(), b);
        assert_eq!(b.diff(a), 1);
        assert_eq!("2020Q1".parse::<QuarterIndex>().unwrap().diff(a), 13);
        assert_eq!(QuarterIndex::range_inclusive(a, b.offset(2)).len(), 4);
        assert!(QuarterIndex::range_inclusive(b, a).is_empty());
    }
}
