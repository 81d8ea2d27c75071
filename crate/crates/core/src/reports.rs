//! Case report store indexed by calendar quarter.
//!
//! Reports file format, tab separated, `#` starts a comment line:
//!
//! ```text
//! <report_id>    <YYYYQn>    <drug1;drug2;...>    <pt1;pt2;...>
//! ```
//!
//! The counting unit is the report: a report naming the same drug or event
//! twice counts once, and multi-drug, multi-event reports contribute to every
//! pair they contain.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quarter::QuarterIndex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub report_id: String,
    pub quarter: QuarterIndex,
    pub drugs: BTreeSet<String>,
    pub events: BTreeSet<String>,
}

/// 2×2 table for one product–event pair:
///
/// |           | event | no event |
/// |-----------|-------|----------|
/// | drug      | a     | b        |
/// | no drug   | c     | d        |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn drug_margin(&self) -> u64 {
        self.a + self.b
    }

    pub fn event_margin(&self) -> u64 {
        self.a + self.c
    }

    /// Expected `a` under independence, `(a+b)(a+c)/N`.
    pub fn expected(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.drug_margin() as f64 * self.event_margin() as f64 / n as f64)
    }

    /// Observed-to-expected ratio; `None` when either margin is zero.
    pub fn observed_expected(&self) -> Option<f64> {
        if self.drug_margin() == 0 || self.event_margin() == 0 {
            return None;
        }
        self.expected().map(|e| self.a as f64 / e)
    }

    /// Every cell multiplied by `k`.
    pub fn scaled(&self, k: u64) -> Self {
        ContingencyTable::new(self.a * k, self.b * k, self.c * k, self.d * k)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions<'a> {
    /// Reports outside `[first, last]` are rejected.
    pub window: Option<(QuarterIndex, QuarterIndex)>,
    /// When given, PT codes not found here raise a warning (the report is kept).
    pub known_events: Option<&'a HashSet<String>>,
    /// When given, only these drugs are retained on each report; reports left
    /// without any drug are dropped.
    pub drug_filter: Option<&'a BTreeSet<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoreSummary {
    pub reports: usize,
    pub drugs: usize,
    pub events: usize,
    pub pairs: usize,
    pub first_quarter: Option<QuarterIndex>,
    pub last_quarter: Option<QuarterIndex>,
    pub per_quarter: BTreeMap<QuarterIndex, usize>,
    pub warnings: usize,
}

/// Immutable report store. Reports are kept sorted by quarter, so all reports
/// up to a cutoff form a prefix and every count is a prefix count.
#[derive(Debug, Clone, Default)]
pub struct ReportStore {
    reports: Vec<Report>,
    quarters: Vec<QuarterIndex>,
    drug_reports: HashMap<String, Vec<u32>>,
    event_reports: HashMap<String, Vec<u32>>,
    pair_reports: HashMap<(String, String), Vec<u32>>,
    warnings: Vec<String>,
}

impl ReportStore {
    pub fn from_reports(reports: Vec<Report>) -> Self {
        Self::build(reports, Vec::new())
    }

    fn build(mut reports: Vec<Report>, warnings: Vec<String>) -> Self {
        reports.sort_by(|x, y| {
            x.quarter
                .cmp(&y.quarter)
                .then_with(|| x.report_id.cmp(&y.report_id))
        });
        let mut drug_reports: HashMap<String, Vec<u32>> = HashMap::new();
        let mut event_reports: HashMap<String, Vec<u32>> = HashMap::new();
        let mut pair_reports: HashMap<(String, String), Vec<u32>> = HashMap::new();
        for (i, r) in reports.iter().enumerate() {
            let i = i as u32;
            for drug in &r.drugs {
                drug_reports.entry(drug.clone()).or_default().push(i);
                for event in &r.events {
                    pair_reports
                        .entry((drug.clone(), event.clone()))
                        .or_default()
                        .push(i);
                }
            }
            for event in &r.events {
                event_reports.entry(event.clone()).or_default().push(i);
            }
        }
        let quarters = reports.iter().map(|r| r.quarter).collect();
        ReportStore {
            reports,
            quarters,
            drug_reports,
            event_reports,
            pair_reports,
            warnings,
        }
    }

    pub fn parse(text: &str, source_name: &str, options: &LoadOptions<'_>) -> Result<Self> {
        let mut by_id: HashMap<String, usize> = HashMap::new();
        let mut reports: Vec<Option<Report>> = Vec::new();
        let mut warnings = Vec::new();
        let mut warn = |msg: String| {
            log::warn!("{msg}");
            warnings.push(msg);
        };

        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, quarter, drugs, events] = fields.as_slice() else {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            };
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::parse(source_name, lineno, "empty report id"));
            }
            let quarter: QuarterIndex = quarter
                .parse()
                .map_err(|e| Error::parse(source_name, lineno, format!("{e}")))?;
            if let Some((first, last)) = options.window {
                if quarter < first || quarter > last {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        format!("quarter {quarter} outside study window {first}..{last}"),
                    ));
                }
            }
            let split = |s: &str| -> BTreeSet<String> {
                s.split(';')
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(str::to_string)
                    .collect()
            };
            let mut drugs = split(drugs);
            let events = split(events);
            if drugs.is_empty() || events.is_empty() {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    "a report needs at least one drug and one event",
                ));
            }
            if let Some(known) = options.known_events {
                for e in events.iter().filter(|e| !known.contains(*e)) {
                    warn(format!("{source_name}:{lineno}: PT {e} not in ontology"));
                }
            }
            if let Some(filter) = options.drug_filter {
                drugs.retain(|d| filter.contains(d));
                if drugs.is_empty() {
                    continue;
                }
            }
            let report = Report {
                report_id: id.to_string(),
                quarter,
                drugs,
                events,
            };
            match by_id.get(id) {
                Some(&slot) => {
                    warn(format!(
                        "{source_name}:{lineno}: duplicate report id {id}; keeping the later record"
                    ));
                    reports[slot] = Some(report);
                }
                None => {
                    by_id.insert(id.to_string(), reports.len());
                    reports.push(Some(report));
                }
            }
        }
        Ok(Self::build(
            reports.into_iter().flatten().collect(),
            warnings,
        ))
    }

    pub fn load(path: impl AsRef<Path>, options: &LoadOptions<'_>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let store = Self::parse(&text, &path.display().to_string(), options)?;
        log::info!("loaded {} reports from {}", store.len(), path.display());
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn first_quarter(&self) -> Option<QuarterIndex> {
        self.quarters.first().copied()
    }

    pub fn last_quarter(&self) -> Option<QuarterIndex> {
        self.quarters.last().copied()
    }

    /// Number of reports with quarter ≤ cutoff.
    pub fn count_at(&self, cutoff: QuarterIndex) -> u64 {
        self.prefix_len(cutoff) as u64
    }

    fn prefix_len(&self, cutoff: QuarterIndex) -> usize {
        self.quarters.partition_point(|q| *q <= cutoff)
    }

    fn prefix_count(list: Option<&Vec<u32>>, limit: usize) -> u64 {
        list.map_or(0, |l| l.partition_point(|&i| (i as usize) < limit) as u64)
    }

    /// Contingency table over all reports up to and including `cutoff`.
    pub fn contingency(&self, drug: &str, event: &str, cutoff: QuarterIndex) -> ContingencyTable {
        let limit = self.prefix_len(cutoff);
        let n = limit as u64;
        let with_drug = Self::prefix_count(self.drug_reports.get(drug), limit);
        let with_event = Self::prefix_count(self.event_reports.get(event), limit);
        let a = Self::prefix_count(
            self.pair_reports
                .get(&(drug.to_string(), event.to_string())),
            limit,
        );
        let b = with_drug - a;
        let c = with_event - a;
        ContingencyTable::new(a, b, c, n - a - b - c)
    }

    /// Co-report count of a pair up to `cutoff`.
    pub fn pair_count(&self, drug: &str, event: &str, cutoff: QuarterIndex) -> u64 {
        Self::prefix_count(
            self.pair_reports
                .get(&(drug.to_string(), event.to_string())),
            self.prefix_len(cutoff),
        )
    }

    /// Pairs with `a >= min_a` at `cutoff`, ordered by drug then PT code.
    pub fn active_pairs(&self, cutoff: QuarterIndex, min_a: u64) -> Vec<(String, String)> {
        let limit = self.prefix_len(cutoff);
        let mut pairs: Vec<(String, String)> = self
            .pair_reports
            .iter()
            .filter(|(_, list)| Self::prefix_count(Some(list), limit) >= min_a.max(1))
            .map(|(k, _)| k.clone())
            .collect();
        pairs.sort_unstable();
        pairs
    }

    pub fn drugs(&self) -> BTreeSet<&str> {
        self.drug_reports.keys().map(String::as_str).collect()
    }

    pub fn events(&self) -> BTreeSet<&str> {
        self.event_reports.keys().map(String::as_str).collect()
    }

    pub fn summary(&self) -> StoreSummary {
        let mut per_quarter = BTreeMap::new();
        for q in &self.quarters {
            *per_quarter.entry(*q).or_insert(0) += 1;
        }
        StoreSummary {
            reports: self.len(),
            drugs: self.drug_reports.len(),
            events: self.event_reports.len(),
            pairs: self.pair_reports.len(),
            first_quarter: self.first_quarter(),
            last_quarter: self.last_quarter(),
            per_quarter,
            warnings: self.warnings.len(),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> QuarterIndex {
        s.parse().unwrap()
    }

    #[test]
    fn six_report_fixture_table() {
        let store = fixtures::six();
        let t = store.contingency("D1", "E1", q("2015Q2"));
        assert_eq!((t.a, t.b, t.c, t.d), (2, 1, 1, 2));
        // Only Q1 reports: r1, r3, r5.
        let t = store.contingency("D1", "E1", q("2015Q1"));
        assert_eq!((t.a, t.b, t.c, t.d), (1, 1, 0, 1));
    }

    #[test]
    fn never_reported_drug_has_empty_row() {
        let store = fixtures::six();
        let t = store.contingency("D9", "E1", q("2015Q2"));
        assert_eq!((t.a, t.b), (0, 0));
        assert_eq!(t.total(), 6);
        assert_eq!(t.observed_expected(), None);
    }

    #[test]
    fn all_reports_with_pair() {
        let text = "x\t2015Q1\tD\tE\ny\t2015Q1\tD\tE\n";
        let store = ReportStore::parse(text, "t", &LoadOptions::default()).unwrap();
        let t = store.contingency("D", "E", q("2015Q1"));
        assert_eq!((t.a, t.b, t.c, t.d), (2, 0, 0, 0));
    }

    #[test]
    fn duplicate_ids_keep_last_with_warning() {
        let text = "x\t2015Q1\tD\tE\nx\t2015Q2\tD\tF\n";
        let store = ReportStore::parse(text, "t", &LoadOptions::default()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.warnings().len(), 1);
        assert_eq!(store.reports()[0].quarter, q("2015Q2"));
        assert!(store.reports()[0].events.contains("F"));
    }

    #[test]
    fn empty_file_gives_empty_store() {
        let store = ReportStore::parse("# nothing\n\n", "t", &LoadOptions::default()).unwrap();
        assert!(store.is_empty());
        assert!(store.active_pairs(q("2015Q1"), 1).is_empty());
    }

    #[test]
    fn malformed_lines_name_the_line() {
        for text in [
            "x\t2015Q1\tD\tE\ny\t2015Q1\tD\n",
            "x\t2015Q1\tD\tE\ny\t2015X1\tD\tE\n",
            "x\t2015Q1\tD\tE\ny\t2015Q1\t\tE\n",
        ] {
            match ReportStore::parse(text, "bad", &LoadOptions::default()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn window_and_unknown_events() {
        let known: HashSet<String> = ["E".to_string()].into();
        let options = LoadOptions {
            window: Some((q("2015Q1"), q("2015Q4"))),
            known_events: Some(&known),
            drug_filter: None,
        };
        let store = ReportStore::parse("x\t2015Q1\tD\tE;Z\n", "t", &options).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.warnings().len(), 1);
        assert!(ReportStore::parse("x\t2016Q1\tD\tE\n", "t", &options).is_err());
    }

    #[test]
    fn drug_filter_drops_other_drugs() {
        let filter: BTreeSet<String> = ["D1".to_string()].into();
        let options = LoadOptions {
            drug_filter: Some(&filter),
            ..Default::default()
        };
        let store = ReportStore::parse(fixtures::SIX_REPORTS, "six", &options).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.drugs(), BTreeSet::from(["D1"]));
    }

    #[test]
    fn observed_expected_examples() {
        let t = ContingencyTable::new(10, 90, 90, 810);
        assert_eq!(t.expected(), Some(10.0));
        assert_eq!(t.observed_expected(), Some(1.0));
        assert_eq!(
            ContingencyTable::new(10, 0, 0, 90).observed_expected(),
            Some(10.0)
        );
        assert_eq!(
            ContingencyTable::new(0, 5, 5, 90).observed_expected(),
            Some(0.0)
        );
        assert_eq!(ContingencyTable::new(0, 0, 5, 90).observed_expected(), None);
    }

    #[test]
    fn active_pairs_on_fixture() {
        let store = fixtures::six();
        let pairs = store.active_pairs(q("2015Q2"), 1);
        let expected: Vec<(String, String)> = [
            ("D1", "E1"),
            ("D1", "E2"),
            ("D2", "E1"),
            ("D2", "E2"),
            ("D2", "E3"),
            ("D3", "E3"),
        ]
        .iter()
        .map(|(d, e)| (d.to_string(), e.to_string()))
        .collect();
        assert_eq!(pairs, expected);
        // r2 names both D1 and D2, so (D2, E1) is co-reported twice (r2, r4).
        assert_eq!(
            store.active_pairs(q("2015Q2"), 2),
            vec![
                ("D1".to_string(), "E1".to_string()),
                ("D1".to_string(), "E2".to_string()),
                ("D2".to_string(), "E1".to_string())
            ]
        );
        assert_eq!(store.active_pairs(q("2015Q1"), 1).len(), 3);
        assert!(store.active_pairs(q("2015Q2"), 1_000).is_empty());
    }

    fn brute_force(
        store: &ReportStore,
        drug: &str,
        event: &str,
        cutoff: QuarterIndex,
    ) -> ContingencyTable {
        let mut t = ContingencyTable::new(0, 0, 0, 0);
        for r in store.reports().iter().filter(|r| r.quarter <= cutoff) {
            match (r.drugs.contains(drug), r.events.contains(event)) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        t
    }

    fn arb_store() -> impl Strategy<Value = ReportStore> {
        let report = (
            0u8..8,
            prop::collection::btree_set(0u8..4, 1..3),
            prop::collection::btree_set(0u8..6, 1..4),
        );
        prop::collection::vec(report, 0..200).prop_map(|rows| {
            let reports = rows
                .into_iter()
                .enumerate()
                .map(|(i, (qo, drugs, events))| Report {
                    report_id: format!("r{i}"),
                    quarter: QuarterIndex::new(2015, 1).unwrap().offset(qo as i64),
                    drugs: drugs.into_iter().map(|d| format!("D{d}")).collect(),
                    events: events.into_iter().map(|e| format!("E{e}")).collect(),
                })
                .collect();
            ReportStore::from_reports(reports)
        })
    }

    proptest! {
        #[test]
        fn indexed_counts_match_rescan(store in arb_store()) {
            let quarters = QuarterIndex::range_inclusive(q("2015Q1"), q("2016Q4"));
            for d in 0..4 {
                for e in 0..6 {
                    let (drug, event) = (format!("D{d}"), format!("E{e}"));
                    let mut prev: Option<ContingencyTable> = None;
                    for &cutoff in &quarters {
                        let t = store.contingency(&drug, &event, cutoff);
                        prop_assert_eq!(t, brute_force(&store, &drug, &event, cutoff));
                        prop_assert_eq!(t.total(), store.count_at(cutoff));
                        if let Some(p) = prev {
                            prop_assert!(t.a >= p.a && t.b >= p.b && t.c >= p.c && t.d >= p.d);
                        }
                        prev = Some(t);
                    }
                }
            }
            for &cutoff in &quarters {
                for k in 1..4 {
                    for (drug, event) in store.active_pairs(cutoff, k) {
                        prop_assert!(store.contingency(&drug, &event, cutoff).a >= k);
                    }
                }
            }
        }
    }
}
