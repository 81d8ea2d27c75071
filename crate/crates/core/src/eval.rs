//! Evaluation against time-stamped reference sets.
//!
//! Reference file format, tab separated, `#` starts a comment line:
//!
//! ```text
//! <drug>    <pt>    POSITIVE    <YYYYQn>
//! <drug>    <pt>    NEGATIVE
//! ```
//!
//! The quarter on a positive control is the quarter its label was updated.
//! A positive counts as detected only if it was alerted before that quarter;
//! positives first alerted at or after it are left out of every cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisConfig, Method, PairResult, PairSelection, SignalAnalysis};
use crate::borrow::WeightPolicy;
use crate::error::{Error, Result};
use crate::ontology::OntologyGraph;
use crate::quarter::QuarterIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReferenceKind {
    Positive,
    Negative,
}

impl fmt::Display for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceKind::Positive => "POSITIVE",
            ReferenceKind::Negative => "NEGATIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReferenceEntry {
    pub drug: String,
    pub pt: String,
    pub kind: ReferenceKind,
    pub label_quarter: Option<QuarterIndex>,
}

impl ReferenceEntry {
    pub fn positive(drug: impl Into<String>, pt: impl Into<String>, label: QuarterIndex) -> Self {
        ReferenceEntry {
            drug: drug.into(),
            pt: pt.into(),
            kind: ReferenceKind::Positive,
            label_quarter: Some(label),
        }
    }

    pub fn negative(drug: impl Into<String>, pt: impl Into<String>) -> Self {
        ReferenceEntry {
            drug: drug.into(),
            pt: pt.into(),
            kind: ReferenceKind::Negative,
            label_quarter: None,
        }
    }
}

/// Validated reference set, sorted by drug then PT.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSet {
    entries: Vec<ReferenceEntry>,
}

impl ReferenceSet {
    pub fn from_entries(mut entries: Vec<ReferenceEntry>) -> Result<Self> {
        for e in &entries {
            match (e.kind, e.label_quarter) {
                (ReferenceKind::Positive, None) => {
                    return Err(Error::Validation(format!(
                        "positive control {}/{} has no label quarter",
                        e.drug, e.pt
                    )))
                }
                (ReferenceKind::Negative, Some(_)) => {
                    return Err(Error::Validation(format!(
                        "negative control {}/{} carries a label quarter",
                        e.drug, e.pt
                    )))
                }
                _ => {}
            }
        }
        entries.sort_by(|x, y| (&x.drug, &x.pt).cmp(&(&y.drug, &y.pt)));
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].drug == w[1].drug && w[0].pt == w[1].pt)
        {
            return Err(Error::Validation(format!(
                "duplicate reference pair {}/{}",
                w[0].drug, w[0].pt
            )));
        }
        Ok(ReferenceSet { entries })
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen: HashMap<(String, String), usize> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!(
                        "expected 3 or 4 tab-separated fields, found {}",
                        fields.len()
                    ),
                ));
            }
            let (drug, pt) = (fields[0], fields[1]);
            if drug.is_empty() || pt.is_empty() {
                return Err(Error::parse(source_name, lineno, "empty drug or PT code"));
            }
            let quarter = match fields.get(3).filter(|s| !s.is_empty()) {
                Some(s) => Some(
                    s.parse::<QuarterIndex>()
                        .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?,
                ),
                None => None,
            };
            let entry = match (fields[2], quarter) {
                ("POSITIVE", Some(q)) => ReferenceEntry::positive(drug, pt, q),
                ("POSITIVE", None) => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        "POSITIVE entry without label quarter",
                    ))
                }
                ("NEGATIVE", None) => ReferenceEntry::negative(drug, pt),
                ("NEGATIVE", Some(_)) => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        "NEGATIVE entry must not carry a quarter",
                    ))
                }
                (other, _) => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        format!("unknown kind `{other}` (expected POSITIVE or NEGATIVE)"),
                    ))
                }
            };
            if let Some(first) = seen.insert((drug.to_string(), pt.to_string()), lineno) {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("duplicate pair {drug}/{pt} (first on line {first})"),
                ));
            }
            entries.push(entry);
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e.label_quarter {
                Some(q) => out.push_str(&format!("{}\t{}\t{}\t{}\n", e.drug, e.pt, e.kind, q)),
                None => out.push_str(&format!("{}\t{}\t{}\n", e.drug, e.pt, e.kind)),
            }
        }
        out
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &ReferenceEntry> {
        self.entries
            .iter()
            .filter(|e| e.kind == ReferenceKind::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &ReferenceEntry> {
        self.entries
            .iter()
            .filter(|e| e.kind == ReferenceKind::Negative)
    }

    /// All (drug, PT) pairs, sorted.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|e| (e.drug.clone(), e.pt.clone()))
            .collect()
    }

    pub fn drugs(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.drug.as_str()).collect()
    }
}

/// A negative control sharing an HLT with a positive control of the same drug.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NegativeControlFlag {
    pub drug: String,
    pub negative_pt: String,
    pub positive_pt: String,
    pub shared_hlts: Vec<String>,
}

/// Checks that no negative control shares an HLT with a positive control of
/// the same drug. PTs missing from the hierarchy are skipped with a warning.
pub fn check_negative_controls(
    reference: &ReferenceSet,
    graph: &OntologyGraph,
) -> Vec<NegativeControlFlag> {
    let mut hlts: HashMap<&str, BTreeSet<String>> = HashMap::new();
    for e in reference.entries() {
        if hlts.contains_key(e.pt.as_str()) {
            continue;
        }
        match graph.hlt_of(&e.pt) {
            Ok(set) => {
                hlts.insert(&e.pt, set);
            }
            Err(err) => log::warn!("reference PT {}: {err}; HLT check skipped", e.pt),
        }
    }
    let mut flags = Vec::new();
    for neg in reference.negatives() {
        let Some(neg_hlts) = hlts.get(neg.pt.as_str()) else {
            continue;
        };
        for pos in reference.positives().filter(|p| p.drug == neg.drug) {
            let Some(pos_hlts) = hlts.get(pos.pt.as_str()) else {
                continue;
            };
            let shared: Vec<String> = neg_hlts.intersection(pos_hlts).cloned().collect();
            if !shared.is_empty() {
                flags.push(NegativeControlFlag {
                    drug: neg.drug.clone(),
                    negative_pt: neg.pt.clone(),
                    positive_pt: pos.pt.clone(),
                    shared_hlts: shared,
                });
            }
        }
    }
    flags
}

/// Earliest cutoff at which a method alerted on a pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DetectionRecord {
    pub drug: String,
    pub pt: String,
    pub method: Method,
    pub first_alert: Option<QuarterIndex>,
}

/// First alerts per (method, drug, PT) at `threshold`, one record for every
/// pair in `universe` and every method in `methods`. Sorted by method, drug,
/// PT.
pub fn detections(
    results: &[PairResult],
    methods: &[Method],
    universe: &[(String, String)],
    threshold: f64,
) -> Vec<DetectionRecord> {
    let mut first: HashMap<(Method, &str, &str), QuarterIndex> = HashMap::new();
    for r in results.iter().filter(|r| r.signal_at(threshold)) {
        first
            .entry((r.method, &r.drug, &r.event))
            .and_modify(|q| *q = (*q).min(r.cutoff))
            .or_insert(r.cutoff);
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let mut out = Vec::with_capacity(methods.len() * universe.len());
    for &m in &methods {
        for (d, p) in universe {
            out.push(DetectionRecord {
                drug: d.clone(),
                pt: p.clone(),
                method: m,
                first_alert: first.get(&(m, d.as_str(), p.as_str())).copied(),
            });
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Cumulative analyses of the reference pairs at every quarter, reduced to
/// first alerts at the configured threshold.
pub fn run_quarters(
    analysis: &SignalAnalysis<'_>,
    methods: &[Method],
    quarters: &[QuarterIndex],
    reference: &ReferenceSet,
) -> Result<(Vec<PairResult>, Vec<DetectionRecord>)> {
    let universe = reference.pairs();
    let results = analysis.run(methods, quarters, &PairSelection::Listed(universe.clone()))?;
    let records = detections(&results, methods, &universe, analysis.config().threshold);
    Ok((results, records))
}

/// Records of one method keyed by pair.
pub fn records_for(records: &[DetectionRecord], method: Method) -> Vec<DetectionRecord> {
    records
        .iter()
        .filter(|r| r.method == method)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Alerts in the label quarter itself count as after the update.
    pub strict_before: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            strict_before: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Positives alerted only at or after their label update.
    pub ignored: u64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
    pub youden: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `se + sp − 1`.
pub fn youden(sensitivity: f64, specificity: f64) -> f64 {
    sensitivity + specificity - 1.0
}

/// Harmonic mean of PPV and sensitivity; `None` when both are zero.
pub fn f1(ppv: f64, sensitivity: f64) -> Option<f64> {
    let s = ppv + sensitivity;
    (s > 0.0).then(|| 2.0 * ppv * sensitivity / s)
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64, ignored: u64) -> Self {
        let sensitivity = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        let ppv = ratio(tp, tp + fp);
        MetricsReport {
            tp,
            fp,
            tn,
            fn_,
            ignored,
            sensitivity,
            specificity,
            ppv,
            f1: ppv.zip(sensitivity).and_then(|(p, s)| f1(p, s)),
            youden: sensitivity.zip(specificity).map(|(se, sp)| youden(se, sp)),
        }
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::Ppv => self.ppv,
            Metric::F1 => self.f1,
            Metric::Youden => self.youden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Sensitivity,
    Specificity,
    Ppv,
    F1,
    Youden,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::Ppv,
        Metric::F1,
        Metric::Youden,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Ppv => "ppv",
            Metric::F1 => "f1",
            Metric::Youden => "youden",
        }
    }
}

/// How one reference entry is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Outcome {
    Tp,
    Fp,
    Tn,
    Fn,
    Ignored,
}

/// Classifies one entry given its first alert, counting only alerts at or
/// before `end`.
pub fn classify(
    entry: &ReferenceEntry,
    first_alert: Option<QuarterIndex>,
    end: QuarterIndex,
    options: &ScoreOptions,
) -> Outcome {
    let alert = first_alert.filter(|&q| q <= end);
    match (entry.kind, alert) {
        (ReferenceKind::Negative, Some(_)) => Outcome::Fp,
        (ReferenceKind::Negative, None) => Outcome::Tn,
        (ReferenceKind::Positive, None) => Outcome::Fn,
        (ReferenceKind::Positive, Some(q)) => {
            let label = entry
                .label_quarter
                .expect("validated positives carry a label quarter");
            let before = if options.strict_before {
                q < label
            } else {
                q <= label
            };
            if before {
                Outcome::Tp
            } else {
                Outcome::Ignored
            }
        }
    }
}

fn alert_map(records: &[DetectionRecord]) -> HashMap<(&str, &str), Option<QuarterIndex>> {
    let mut map: HashMap<(&str, &str), Option<QuarterIndex>> = HashMap::new();
    for r in records {
        let slot = map.entry((&r.drug, &r.pt)).or_insert(None);
        *slot = match (*slot, r.first_alert) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    map
}

fn tally(outcomes: impl IntoIterator<Item = Outcome>) -> MetricsReport {
    let (mut tp, mut fp, mut tn, mut fn_, mut ignored) = (0, 0, 0, 0, 0);
    for o in outcomes {
        match o {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Tn => tn += 1,
            Outcome::Fn => fn_ += 1,
            Outcome::Ignored => ignored += 1,
        }
    }
    MetricsReport::from_counts(tp, fp, tn, fn_, ignored)
}

/// Scores one method's records against the reference at `end`. Reference
/// pairs without a record are treated as never alerted.
pub fn score(
    records: &[DetectionRecord],
    reference: &ReferenceSet,
    end: QuarterIndex,
    options: &ScoreOptions,
) -> MetricsReport {
    let alerts = alert_map(records);
    tally(reference.entries().iter().map(|e| {
        let first = alerts
            .get(&(e.drug.as_str(), e.pt.as_str()))
            .copied()
            .flatten();
        classify(e, first, end, options)
    }))
}

/// Metrics at each cutoff using what was known then: alerts up to the
/// cutoff, and only positives whose label update is still ahead.
pub fn quarterly_curves(
    records: &[DetectionRecord],
    reference: &ReferenceSet,
    quarters: &[QuarterIndex],
    options: &ScoreOptions,
) -> Vec<(QuarterIndex, MetricsReport)> {
    let alerts = alert_map(records);
    quarters
        .iter()
        .map(|&q| {
            let outcomes = reference
                .entries()
                .iter()
                .filter(|e| e.label_quarter.is_none_or(|l| l > q))
                .map(|e| {
                    let first = alerts
                        .get(&(e.drug.as_str(), e.pt.as_str()))
                        .copied()
                        .flatten();
                    classify(e, first, q, options)
                });
            (q, tally(outcomes))
        })
        .collect()
}

/// Two-by-two comparison of detected positive controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub method_a: Method,
    pub method_b: Method,
    pub both: u64,
    pub only_a: u64,
    pub only_b: u64,
    pub neither: u64,
    /// Concordant detections in the same quarter.
    pub same_quarter: u64,
    /// Quarter assigned to the missing detection of a discordant pair.
    pub imputed_quarter: QuarterIndex,
    /// `first_alert_b − first_alert_a` in quarters: `(observed, imputed)`
    /// counts per difference.
    pub delta_histogram: BTreeMap<i64, (u64, u64)>,
    /// Mean over concordant and discordant pairs.
    pub mean_delta: Option<f64>,
    /// Mean over concordant pairs only.
    pub mean_delta_observed: Option<f64>,
}

/// Compares which positive controls two methods detect (a true positive at
/// `end`) and how many quarters apart. Positive Δ means `a` alerted first.
pub fn compare_methods(
    records_a: &[DetectionRecord],
    records_b: &[DetectionRecord],
    reference: &ReferenceSet,
    end: QuarterIndex,
    options: &ScoreOptions,
) -> Comparison {
    let method_of = |rs: &[DetectionRecord]| rs.first().map(|r| r.method).unwrap_or(Method::Ic);
    let imputed = end.next();
    let alerts_a = alert_map(records_a);
    let alerts_b = alert_map(records_b);
    let mut c = Comparison {
        method_a: method_of(records_a),
        method_b: method_of(records_b),
        both: 0,
        only_a: 0,
        only_b: 0,
        neither: 0,
        same_quarter: 0,
        imputed_quarter: imputed,
        delta_histogram: BTreeMap::new(),
        mean_delta: None,
        mean_delta_observed: None,
    };
    let (mut sum, mut n, mut sum_obs, mut n_obs) = (0i64, 0u64, 0i64, 0u64);
    for e in reference.positives() {
        let key = (e.drug.as_str(), e.pt.as_str());
        let detected = |alerts: &HashMap<(&str, &str), Option<QuarterIndex>>| {
            let first = alerts.get(&key).copied().flatten();
            (classify(e, first, end, options) == Outcome::Tp).then(|| first.unwrap())
        };
        let (qa, qb) = (detected(&alerts_a), detected(&alerts_b));
        let (delta, observed) = match (qa, qb) {
            (Some(a), Some(b)) => {
                c.both += 1;
                if a == b {
                    c.same_quarter += 1;
                }
                (b.diff(a), true)
            }
            (Some(a), None) => {
                c.only_a += 1;
                (imputed.diff(a), false)
            }
            (None, Some(b)) => {
                c.only_b += 1;
                (b.diff(imputed), false)
            }
            (None, None) => {
                c.neither += 1;
                continue;
            }
        };
        let slot = c.delta_histogram.entry(delta).or_insert((0, 0));
        if observed {
            slot.0 += 1;
            sum_obs += delta;
            n_obs += 1;
        } else {
            slot.1 += 1;
        }
        sum += delta;
        n += 1;
    }
    c.mean_delta = (n > 0).then(|| sum as f64 / n as f64);
    c.mean_delta_observed = (n_obs > 0).then(|| sum_obs as f64 / n_obs as f64);
    c
}

/// Fraction of bootstrap replicates in which method `a` beats `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub method_a: Method,
    pub method_b: Method,
    pub n_iter: usize,
    pub seed: u64,
    /// Per metric: share of replicates with `a > b`; ties, including
    /// replicates where either value is undefined, are split by a seeded
    /// coin flip.
    pub superiority: BTreeMap<Metric, f64>,
    /// Per metric: replicates where either value was undefined.
    pub undefined: BTreeMap<Metric, usize>,
}

/// Resamples reference entries with replacement and recomputes the metrics
/// of both methods on each replicate.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap(
    records_a: &[DetectionRecord],
    records_b: &[DetectionRecord],
    reference: &ReferenceSet,
    end: QuarterIndex,
    options: &ScoreOptions,
    n_iter: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if n_iter == 0 {
        return Err(Error::Validation(
            "bootstrap needs at least one iteration".into(),
        ));
    }
    if n_iter < 100 {
        log::warn!("bootstrap with only {n_iter} iterations");
    }
    let method_of = |rs: &[DetectionRecord]| rs.first().map(|r| r.method).unwrap_or(Method::Ic);
    let outcomes = |records: &[DetectionRecord]| -> Vec<Outcome> {
        let alerts = alert_map(records);
        reference
            .entries()
            .iter()
            .map(|e| {
                let first = alerts
                    .get(&(e.drug.as_str(), e.pt.as_str()))
                    .copied()
                    .flatten();
                classify(e, first, end, options)
            })
            .collect()
    };
    let (oa, ob) = (outcomes(records_a), outcomes(records_b));
    let n = reference.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins: BTreeMap<Metric, u64> = Metric::ALL.iter().map(|&m| (m, 0)).collect();
    let mut undefined: BTreeMap<Metric, usize> = Metric::ALL.iter().map(|&m| (m, 0)).collect();
    let mut idx = vec![0usize; n];
    for _ in 0..n_iter {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let ma = tally(idx.iter().map(|&i| oa[i]));
        let mb = tally(idx.iter().map(|&i| ob[i]));
        for m in Metric::ALL {
            let win = match (ma.metric(m), mb.metric(m)) {
                (Some(x), Some(y)) if x > y => true,
                (Some(x), Some(y)) if x < y => false,
                (x, y) => {
                    if x.is_none() || y.is_none() {
                        *undefined.get_mut(&m).unwrap() += 1;
                    }
                    rng.random_bool(0.5)
                }
            };
            if win {
                *wins.get_mut(&m).unwrap() += 1;
            }
        }
    }
    Ok(BootstrapResult {
        method_a: method_of(records_a),
        method_b: method_of(records_b),
        n_iter,
        seed,
        superiority: wins
            .into_iter()
            .map(|(m, w)| (m, w as f64 / n_iter as f64))
            .collect(),
        undefined,
    })
}

/// One-at-a-time sensitivity grid around the configured reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub min_ssm: Vec<f64>,
    pub w: Vec<WeightPolicy>,
    pub vague_sd: Vec<f64>,
    pub threshold: Vec<f64>,
}

impl Default for SweepGrid {
    /// The published sensitivity grid.
    fn default() -> Self {
        SweepGrid {
            min_ssm: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            w: vec![
                WeightPolicy::Fixed(0.7),
                WeightPolicy::Fixed(0.8),
                WeightPolicy::Fixed(0.9),
                WeightPolicy::MaxSsm,
            ],
            vague_sd: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
            threshold: vec![0.0, 0.5, 1.0],
        }
    }
}

impl SweepGrid {
    /// Empty axes, i.e. only the reference point.
    pub fn empty() -> Self {
        SweepGrid {
            min_ssm: Vec::new(),
            w: Vec::new(),
            vague_sd: Vec::new(),
            threshold: Vec::new(),
        }
    }

    /// Smallest `min_ssm` any point needs, given the reference config.
    pub fn lowest_min_ssm(&self, reference: &AnalysisConfig) -> f64 {
        self.min_ssm
            .iter()
            .copied()
            .fold(reference.min_ssm, f64::min)
    }

    /// `(axis, value label, config)` for every point; each axis includes the
    /// reference value.
    pub fn points(
        &self,
        reference: &AnalysisConfig,
    ) -> Vec<(&'static str, String, AnalysisConfig)> {
        let mut out = vec![("reference", "reference".to_string(), reference.clone())];
        let mut axis = |name: &'static str, labels: Vec<(String, AnalysisConfig)>| {
            if labels.is_empty() {
                return;
            }
            let mut seen = BTreeSet::new();
            for (label, cfg) in labels {
                if seen.insert(label.clone()) {
                    out.push((name, label, cfg));
                }
            }
        };
        let with = |f: &dyn Fn(&mut AnalysisConfig)| {
            let mut c = reference.clone();
            f(&mut c);
            c
        };
        let mut min_ssm = self.min_ssm.clone();
        min_ssm.push(reference.min_ssm);
        min_ssm.sort_by(f64::total_cmp);
        axis(
            "min_ssm",
            if self.min_ssm.is_empty() {
                Vec::new()
            } else {
                min_ssm
                    .iter()
                    .map(|&v| (v.to_string(), with(&|c| c.min_ssm = v)))
                    .collect()
            },
        );
        let mut ws = self.w.clone();
        if !ws.contains(&reference.w_policy) {
            ws.push(reference.w_policy);
        }
        axis(
            "w",
            if self.w.is_empty() {
                Vec::new()
            } else {
                ws.iter()
                    .map(|&w| (w.to_string(), with(&|c| c.w_policy = w)))
                    .collect()
            },
        );
        let mut sds = self.vague_sd.clone();
        sds.push(reference.vague_sd);
        sds.sort_by(f64::total_cmp);
        axis(
            "vague_sd",
            if self.vague_sd.is_empty() {
                Vec::new()
            } else {
                sds.iter()
                    .map(|&v| (v.to_string(), with(&|c| c.vague_sd = v)))
                    .collect()
            },
        );
        let mut ths = self.threshold.clone();
        ths.push(reference.threshold);
        ths.sort_by(f64::total_cmp);
        axis(
            "threshold",
            if self.threshold.is_empty() {
                Vec::new()
            } else {
                ths.iter()
                    .map(|&v| (v.to_string(), with(&|c| c.threshold = v)))
                    .collect()
            },
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub method: Method,
    pub metrics: MetricsReport,
}

/// Runs every grid point for every method and scores it at `end`. The
/// analysis should carry a [`PosteriorMemo`](crate::analysis::PosteriorMemo)
/// so plain IC posteriors are computed once.
pub fn parameter_sweep(
    analysis: &SignalAnalysis<'_>,
    methods: &[Method],
    quarters: &[QuarterIndex],
    reference: &ReferenceSet,
    grid: &SweepGrid,
    end: QuarterIndex,
    options: &ScoreOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (axis, value, cfg) in grid.points(analysis.config()) {
        log::info!("sweep point {axis} = {value}");
        let point = analysis.with_config(cfg)?;
        let (_, records) = run_quarters(&point, methods, quarters, reference)?;
        let mut ms = methods.to_vec();
        ms.sort();
        ms.dedup();
        for m in ms {
            rows.push(SweepRow {
                axis: axis.to_string(),
                value: value.clone(),
                method: m,
                metrics: score(&records_for(&records, m), reference, end, options),
            });
        }
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn metrics_cells(m: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        m.tp,
        m.fp,
        m.tn,
        m.fn_,
        m.ignored,
        opt(m.sensitivity),
        opt(m.specificity),
        opt(m.ppv),
        opt(m.f1),
        opt(m.youden)
    )
}

const METRIC_COLUMNS: &str = "tp,fp,tn,fn,ignored,sensitivity,specificity,ppv,f1,youden";

/// `metrics.csv`: one row per scope, quarter and method. Undefined metrics
/// are empty cells.
pub fn metrics_csv(rows: &[(String, QuarterIndex, Method, MetricsReport)]) -> String {
    let mut out = format!("scope,quarter,method,{METRIC_COLUMNS}\n");
    for (scope, q, m, r) in rows {
        out.push_str(&format!("{scope},{q},{m},{}\n", metrics_cells(r)));
    }
    out
}

/// `detections.csv`: first alert per pair and method, empty when never.
pub fn detections_csv(records: &[DetectionRecord]) -> String {
    let mut out = String::from("drug,pt,method,first_alert\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.drug,
            r.pt,
            r.method,
            r.first_alert.map(|q| q.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// `compare.csv`: one row per compared method pair.
pub fn compare_csv(comparisons: &[Comparison]) -> String {
    let mut out = String::from(
        "method_a,method_b,both,only_a,only_b,neither,same_quarter,imputed_quarter,\
         mean_delta,mean_delta_observed\n",
    );
    for c in comparisons {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.method_a,
            c.method_b,
            c.both,
            c.only_a,
            c.only_b,
            c.neither,
            c.same_quarter,
            c.imputed_quarter,
            opt(c.mean_delta),
            opt(c.mean_delta_observed)
        ));
    }
    out
}

/// `compare_delta.csv`: the Δ histogram with observed and imputed mass.
pub fn compare_delta_csv(comparisons: &[Comparison]) -> String {
    let mut out = String::from("method_a,method_b,delta,observed,imputed\n");
    for c in comparisons {
        for (d, (obs, imp)) in &c.delta_histogram {
            out.push_str(&format!("{},{},{d},{obs},{imp}\n", c.method_a, c.method_b));
        }
    }
    out
}

/// `sweep.csv`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("axis,value,method,{METRIC_COLUMNS}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.axis,
            r.value,
            r.method,
            metrics_cells(&r.metrics)
        ));
    }
    out
}

/// `bootstrap.json`.
pub fn bootstrap_json(results: &[BootstrapResult]) -> String {
    serde_json::to_string_pretty(results).expect("bootstrap results serialize") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> QuarterIndex {
        s.parse().unwrap()
    }

    fn rec(drug: &str, pt: &str, method: Method, first: Option<&str>) -> DetectionRecord {
        DetectionRecord {
            drug: drug.into(),
            pt: pt.into(),
            method,
            first_alert: first.map(q),
        }
    }

    /// Five pairs: three positives labelled in 2017Q1, two negatives.
    fn five() -> ReferenceSet {
        ReferenceSet::parse(
            "D\tP1\tPOSITIVE\t2017Q1\n\
             D\tP2\tPOSITIVE\t2017Q1\n\
             D\tP3\tPOSITIVE\t2017Q1\n\
             D\tN1\tNEGATIVE\n\
             D\tN2\tNEGATIVE\n",
            "five",
        )
        .unwrap()
    }

    fn five_records() -> Vec<DetectionRecord> {
        vec![
            rec("D", "P1", Method::Ic, Some("2016Q2")),
            rec("D", "P2", Method::Ic, Some("2017Q1")),
            rec("D", "P3", Method::Ic, None),
            rec("D", "N1", Method::Ic, Some("2016Q4")),
            rec("D", "N2", Method::Ic, None),
        ]
    }

    #[test]
    fn parses_valid_reference() {
        let r = ReferenceSet::parse(
            "# comment\nD1\tP1\tPOSITIVE\t2016Q3\nD1\tP2\tNEGATIVE\nD2\tP1\tNEGATIVE\t\nD2\tP3\tPOSITIVE\t2019Q4\n",
            "ref",
        )
        .unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r.positives().count(), 2);
        assert_eq!(ReferenceSet::parse(&r.to_text(), "again").unwrap(), r);
    }

    #[test]
    fn rejects_bad_reference_lines() {
        let dup = ReferenceSet::parse("D\tP\tNEGATIVE\nD\tP\tPOSITIVE\t2016Q1\n", "r");
        assert!(matches!(dup, Err(Error::Parse { line: 2, .. })));
        assert!(ReferenceSet::parse("D\tP\tPOSITIVE\n", "r").is_err());
        assert!(ReferenceSet::parse("D\tP\tMAYBE\n", "r").is_err());
        assert!(ReferenceSet::parse("D\tP\tNEGATIVE\t2016Q1\n", "r").is_err());
        assert!(ReferenceSet::parse("D\tP\n", "r").is_err());
    }

    #[test]
    fn negative_control_check() {
        let graph = crate::ontology::fixtures::grouped();
        // P1 and P2 share T1; P5 sits in T3 only.
        let clean = ReferenceSet::parse("D\tP1\tPOSITIVE\t2016Q1\nD\tP5\tNEGATIVE\n", "r").unwrap();
        assert!(check_negative_controls(&clean, &graph).is_empty());
        let planted = ReferenceSet::parse(
            "D\tP1\tPOSITIVE\t2016Q1\nD\tP2\tNEGATIVE\nE\tP2\tNEGATIVE\n",
            "r",
        )
        .unwrap();
        let flags = check_negative_controls(&planted, &graph);
        assert_eq!(flags.len(), 1);
        assert_eq!(
            (
                flags[0].drug.as_str(),
                flags[0].negative_pt.as_str(),
                flags[0].positive_pt.as_str()
            ),
            ("D", "P2", "P1")
        );
        assert_eq!(flags[0].shared_hlts, ["T1"]);
        let no_neg = ReferenceSet::parse("D\tP1\tPOSITIVE\t2016Q1\n", "r").unwrap();
        assert!(check_negative_controls(&no_neg, &graph).is_empty());
    }

    #[test]
    fn scoring_rules() {
        let m = score(
            &five_records(),
            &five(),
            q("2019Q4"),
            &ScoreOptions::default(),
        );
        // P1 before label: TP. P2 in label quarter: ignored. P3: FN.
        assert_eq!((m.tp, m.fp, m.tn, m.fn_, m.ignored), (1, 1, 1, 1, 1));
        assert_eq!(m.sensitivity, Some(0.5));
        assert_eq!(m.ppv, Some(0.5));
        let inclusive = score(
            &five_records(),
            &five(),
            q("2019Q4"),
            &ScoreOptions {
                strict_before: false,
            },
        );
        assert_eq!((inclusive.tp, inclusive.ignored), (2, 0));
        // Alerts after `end` do not count.
        let early = score(
            &five_records(),
            &five(),
            q("2016Q3"),
            &ScoreOptions::default(),
        );
        assert_eq!((early.tp, early.fp, early.tn, early.fn_), (1, 0, 2, 2));
    }

    #[test]
    fn metric_formulas() {
        let m = MetricsReport::from_counts(1332, 0, 0, 1005, 0);
        assert!((m.sensitivity.unwrap() - 0.570).abs() < 5e-4);
        assert!((youden(0.570, 0.676) - 0.246).abs() < 1e-3);
        assert!((f1(0.161, 0.501).unwrap() - 0.244).abs() < 1e-3);
        let empty = MetricsReport::from_counts(0, 0, 0, 0, 0);
        assert_eq!(empty.sensitivity, None);
        assert_eq!(empty.f1, None);
        assert_eq!(f1(0.0, 0.0), None);
    }

    #[test]
    fn quarterly_curves_prune_labelled_positives() {
        let qs = [q("2016Q1"), q("2016Q2"), q("2016Q4"), q("2017Q1")];
        let curves = quarterly_curves(&five_records(), &five(), &qs, &ScoreOptions::default());
        let counts: Vec<_> = curves
            .iter()
            .map(|(_, m)| (m.tp, m.fp, m.tn, m.fn_))
            .collect();
        assert_eq!(
            counts,
            vec![(0, 0, 2, 3), (1, 0, 2, 2), (1, 1, 1, 2), (0, 1, 1, 0)]
        );
        let empty = quarterly_curves(&[], &ReferenceSet::default(), &qs, &ScoreOptions::default());
        assert!(empty
            .iter()
            .all(|(_, m)| m.tp + m.fp + m.tn + m.fn_ == 0 && m.sensitivity.is_none()));
    }

    #[test]
    fn comparison_of_identical_records() {
        let r = five_records();
        let c = compare_methods(&r, &r, &five(), q("2019Q4"), &ScoreOptions::default());
        assert_eq!((c.both, c.only_a, c.only_b, c.neither), (1, 0, 0, 2));
        assert_eq!(c.delta_histogram, BTreeMap::from([(0, (1, 0))]));
        assert_eq!(c.mean_delta, Some(0.0));
    }

    #[test]
    fn comparison_one_quarter_earlier() {
        let reference = ReferenceSet::parse("D\tP\tPOSITIVE\t2018Q1\n", "r").unwrap();
        let a = [rec("D", "P", Method::IcSsm, Some("2016Q3"))];
        let b = [rec("D", "P", Method::Ic, Some("2016Q4"))];
        let c = compare_methods(&a, &b, &reference, q("2019Q4"), &ScoreOptions::default());
        assert_eq!(c.delta_histogram, BTreeMap::from([(1, (1, 0))]));
        assert_eq!((c.method_a, c.method_b), (Method::IcSsm, Method::Ic));
    }

    #[test]
    fn comparison_imputes_missing_detection() {
        let reference = ReferenceSet::parse("D\tP\tPOSITIVE\t2020Q4\n", "r").unwrap();
        let a = [rec("D", "P", Method::IcSsm, Some("2019Q2"))];
        let c = compare_methods(&a, &[], &reference, q("2019Q4"), &ScoreOptions::default());
        assert_eq!(c.imputed_quarter, q("2020Q1"));
        assert_eq!(c.only_a, 1);
        assert_eq!(c.delta_histogram, BTreeMap::from([(3, (0, 1))]));
        assert_eq!(c.mean_delta_observed, None);
    }

    #[test]
    fn bootstrap_edge_cases() {
        let r = five_records();
        let ref5 = five();
        let same = bootstrap(
            &r,
            &r,
            &ref5,
            q("2019Q4"),
            &ScoreOptions::default(),
            2000,
            7,
        )
        .unwrap();
        for (m, f) in &same.superiority {
            assert!((f - 0.5).abs() < 0.05, "{m:?}: {f}");
        }
        let once = bootstrap(&r, &r, &ref5, q("2019Q4"), &ScoreOptions::default(), 1, 7).unwrap();
        assert!(once.superiority.values().all(|&f| f == 0.0 || f == 1.0));
        let again = bootstrap(
            &r,
            &r,
            &ref5,
            q("2019Q4"),
            &ScoreOptions::default(),
            2000,
            7,
        )
        .unwrap();
        assert_eq!(same, again);
        assert!(bootstrap(&r, &r, &ref5, q("2019Q4"), &ScoreOptions::default(), 0, 7).is_err());
    }

    #[test]
    fn bootstrap_dominated_method() {
        let mut entries = Vec::new();
        let (mut good, mut bad) = (Vec::new(), Vec::new());
        for i in 0..20 {
            entries.push(ReferenceEntry::positive(
                "D",
                format!("P{i:02}"),
                q("2018Q1"),
            ));
            entries.push(ReferenceEntry::negative("D", format!("N{i:02}")));
            good.push(rec("D", &format!("P{i:02}"), Method::IcSsm, Some("2016Q1")));
            if i % 2 == 0 {
                bad.push(rec("D", &format!("P{i:02}"), Method::Ic, Some("2016Q1")));
            }
        }
        let reference = ReferenceSet::from_entries(entries).unwrap();
        let b = bootstrap(
            &good,
            &bad,
            &reference,
            q("2019Q4"),
            &ScoreOptions::default(),
            500,
            3,
        )
        .unwrap();
        assert!(b.superiority[&Metric::Sensitivity] >= 0.99);
        assert!(b.superiority[&Metric::Youden] >= 0.99);
    }

    #[test]
    fn sweep_points_include_reference() {
        let base = AnalysisConfig::default();
        let pts = SweepGrid::default().points(&base);
        assert_eq!(pts[0].0, "reference");
        for axis in ["min_ssm", "w", "vague_sd", "threshold"] {
            assert!(
                pts.iter().any(|(a, _, c)| *a == axis && c == &base),
                "{axis}"
            );
        }
        // Every default axis already contains its reference value.
        assert_eq!(pts.len(), 1 + 6 + 4 + 6 + 3);
        assert_eq!(SweepGrid::empty().points(&base).len(), 1);
    }

    #[test]
    fn csv_writers_leave_null_metrics_empty() {
        let m = MetricsReport::from_counts(0, 0, 0, 0, 0);
        let csv = metrics_csv(&[("overall".into(), q("2019Q4"), Method::Ic, m)]);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "overall,2019Q4,IC,0,0,0,0,0,,,,,"
        );
        let d = detections_csv(&[rec("D", "P", Method::Ic, None)]);
        assert_eq!(d.lines().nth(1).unwrap(), "D,P,IC,");
    }

    fn arb_records() -> impl Strategy<Value = (ReferenceSet, Vec<Option<i64>>)> {
        prop::collection::vec((any::<bool>(), 0i64..16, prop::option::of(0i64..20)), 1..40)
            .prop_map(|rows| {
                let base = QuarterIndex::new(2016, 1).unwrap();
                let mut entries = Vec::new();
                let mut alerts = Vec::new();
                for (i, (pos, label, alert)) in rows.into_iter().enumerate() {
                    let pt = format!("P{i}");
                    entries.push(if pos {
                        ReferenceEntry::positive("D", pt, base.offset(label))
                    } else {
                        ReferenceEntry::negative("D", pt)
                    });
                    alerts.push(alert);
                }
                (ReferenceSet::from_entries(entries).unwrap(), alerts)
            })
    }

    proptest! {
        #[test]
        fn partition_and_conservation((reference, alerts) in arb_records(), shift in 0i64..4) {
            let base = QuarterIndex::new(2016, 1).unwrap();
            let end = base.offset(19);
            let mk = |m: Method, extra: i64| -> Vec<DetectionRecord> {
                reference.entries().iter().zip(&alerts).map(|(e, a)| DetectionRecord {
                    drug: e.drug.clone(), pt: e.pt.clone(), method: m,
                    first_alert: a.map(|x| base.offset(x + extra)),
                }).collect()
            };
            let (a, b) = (mk(Method::IcSsm, 0), mk(Method::Ic, shift));
            let opts = ScoreOptions::default();
            let m = score(&a, &reference, end, &opts);
            let n_pos = reference.positives().count() as u64;
            let n_neg = reference.negatives().count() as u64;
            prop_assert_eq!(m.tp + m.fn_ + m.ignored, n_pos);
            prop_assert_eq!(m.tn + m.fp, n_neg);
            let c = compare_methods(&a, &b, &reference, end, &opts);
            prop_assert_eq!(c.both + c.only_a + c.only_b + c.neither, n_pos);
            let observed: u64 = c.delta_histogram.values().map(|v| v.0).sum();
            prop_assert_eq!(observed, c.both);
            // Later alerts never add detections.
            let mb = score(&b, &reference, end, &opts);
            prop_assert!(mb.tp <= m.tp);
            prop_assert!(mb.fp <= m.fp);
            prop_assert_eq!(c.only_b, 0);
        }
    }
}
