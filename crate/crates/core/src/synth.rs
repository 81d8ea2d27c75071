//! Synthetic report stores, ontologies and reference sets with planted truth.
//!
//! The ontology is a balanced tree `ROOT → SOC → HLGT → HLT → PT`, present
//! both as ISA edges (for similarity) and MEDDRA edges (for grouping), so
//! Seco IC values and hence Sokal similarities are known in closed form:
//! siblings under one HLT share the HLT as MICA, cousins under one HLGT share
//! the HLGT.
//!
//! Reports are drawn quarter by quarter. Each report names one drug (a second
//! one with probability `second_drug_rate`), and every PT is included
//! independently with its base probability, multiplied for planted pairs from
//! their onset quarter on. Reports that end up without any event are not
//! emitted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{ReferenceEntry, ReferenceSet};
use crate::ontology::DEFAULT_MIN_SSM;
use crate::quarter::QuarterIndex;
use crate::reports::{LoadOptions, ReportStore};

/// Fan-out at each level of the balanced tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    pub socs: usize,
    pub hlgts_per_soc: usize,
    pub hlts_per_hlgt: usize,
    pub pts_per_hlt: usize,
}

impl Default for TreeShape {
    fn default() -> Self {
        TreeShape {
            socs: 4,
            hlgts_per_soc: 3,
            hlts_per_hlgt: 4,
            pts_per_hlt: 5,
        }
    }
}

impl TreeShape {
    pub fn hlgt_count(&self) -> usize {
        self.socs * self.hlgts_per_soc
    }

    pub fn hlt_count(&self) -> usize {
        self.hlgt_count() * self.hlts_per_hlgt
    }

    pub fn pt_count(&self) -> usize {
        self.hlt_count() * self.pts_per_hlt
    }

    /// All concepts including the root.
    pub fn concept_count(&self) -> usize {
        1 + self.socs + self.hlgt_count() + self.hlt_count() + self.pt_count()
    }

    fn ic_with_descendants(&self, desc: usize) -> f64 {
        1.0 - ((desc + 1) as f64).ln() / (self.concept_count() as f64).ln()
    }

    /// Sokal similarity of two PTs under the same HLT.
    pub fn sibling_ssm(&self) -> f64 {
        let m = self.ic_with_descendants(self.pts_per_hlt);
        m / (4.0 - 3.0 * m)
    }

    /// Sokal similarity of two PTs under the same HLGT but different HLTs.
    pub fn cousin_ssm(&self) -> f64 {
        let m = self.ic_with_descendants(self.hlts_per_hlgt * (self.pts_per_hlt + 1));
        m / (4.0 - 3.0 * m)
    }

    pub fn pt_code(i: usize) -> String {
        format!("PT{i:04}")
    }

    pub fn hlt_code(i: usize) -> String {
        format!("HLT{i:03}")
    }

    pub fn hlgt_code(i: usize) -> String {
        format!("HLGT{i:02}")
    }

    pub fn soc_code(i: usize) -> String {
        format!("SOC{i}")
    }

    /// HLT index of PT `i`.
    pub fn hlt_of(&self, pt: usize) -> usize {
        pt / self.pts_per_hlt
    }

    /// PT indices under HLT `h`.
    pub fn pts_of_hlt(&self, h: usize) -> std::ops::Range<usize> {
        h * self.pts_per_hlt..(h + 1) * self.pts_per_hlt
    }

    /// Ontology file text.
    pub fn ontology_text(&self) -> String {
        let mut out = String::from("# balanced synthetic hierarchy\n");
        let node = |out: &mut String, code: &str, level: &str, label: &str| {
            let _ = writeln!(out, "N\t{code}\t{level}\t{label}");
        };
        node(&mut out, "ROOT", "OTHER", "root");
        for s in 0..self.socs {
            node(
                &mut out,
                &Self::soc_code(s),
                "SOC",
                &format!("system organ class {s}"),
            );
        }
        for g in 0..self.hlgt_count() {
            node(
                &mut out,
                &Self::hlgt_code(g),
                "HLGT",
                &format!("group term {g}"),
            );
        }
        for h in 0..self.hlt_count() {
            node(
                &mut out,
                &Self::hlt_code(h),
                "HLT",
                &format!("high level term {h}"),
            );
        }
        for p in 0..self.pt_count() {
            node(
                &mut out,
                &Self::pt_code(p),
                "PT",
                &format!("preferred term {p}"),
            );
        }
        let mut edge = |child: String, parent: String, meddra: bool| {
            let _ = writeln!(out, "E\t{child}\t{parent}\tISA");
            if meddra {
                let _ = writeln!(out, "E\t{child}\t{parent}\tMEDDRA");
            }
        };
        for s in 0..self.socs {
            edge(Self::soc_code(s), "ROOT".into(), false);
        }
        for g in 0..self.hlgt_count() {
            edge(
                Self::hlgt_code(g),
                Self::soc_code(g / self.hlgts_per_soc),
                true,
            );
        }
        for h in 0..self.hlt_count() {
            edge(
                Self::hlt_code(h),
                Self::hlgt_code(h / self.hlts_per_hlgt),
                true,
            );
        }
        for p in 0..self.pt_count() {
            edge(Self::pt_code(p), Self::hlt_code(self.hlt_of(p)), true);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterRegime {
    /// All PTs of one HLT share the planted elevation.
    Concordant,
    /// One planted PT whose HLT siblings stay at baseline.
    Discordant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSignal {
    pub drug: String,
    pub pt: String,
    /// Relative-risk multiplier on the event probability, ≥ 1.
    pub multiplier: f64,
    pub onset: QuarterIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub drug: String,
    pub hlt: usize,
    pub regime: ClusterRegime,
    pub multiplier: f64,
    /// Quarters after the first quarter.
    pub onset_offset: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub tree: TreeShape,
    pub n_drugs: usize,
    pub first_quarter: QuarterIndex,
    pub n_quarters: usize,
    pub reports_per_quarter: usize,
    /// Expected number of events per report at baseline.
    pub mean_events: f64,
    /// Log-scale spread of PT base rates.
    pub rate_spread: f64,
    pub second_drug_rate: f64,
    pub planted: Vec<PlantedSignal>,
    pub clusters: Vec<ClusterSpec>,
    /// Quarters between onset and label update of a positive control.
    pub label_lag: i64,
    /// HLT-disjoint negative controls drawn per drug.
    pub negatives_per_drug: usize,
    /// Threshold the designed similarity regimes must respect.
    pub min_ssm: f64,
}

pub const PRESETS: [&str; 5] = [
    "null",
    "concordant_cluster",
    "discordant_cluster",
    "dominated_method",
    "empty",
];

impl Scenario {
    /// Baseline settings shared by all presets: 4 drugs, 240 PTs, 20
    /// quarters from 2015Q1.
    pub fn base(name: &str, seed: u64) -> Self {
        Scenario {
            name: name.to_string(),
            seed,
            tree: TreeShape::default(),
            n_drugs: 4,
            first_quarter: QuarterIndex::new(2015, 1).unwrap(),
            n_quarters: 20,
            reports_per_quarter: 800,
            mean_events: 2.0,
            rate_spread: 0.75,
            second_drug_rate: 0.1,
            planted: Vec::new(),
            clusters: Vec::new(),
            label_lag: 4,
            negatives_per_drug: 20,
            min_ssm: DEFAULT_MIN_SSM,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let mut s = Self::base(name, seed);
        let pick_hlt = |salt: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
            rng.random_range(0..s.tree.hlt_count())
        };
        match name {
            "null" => {}
            "concordant_cluster" => {
                let hlt = pick_hlt(0xC0C0);
                s.clusters.push(ClusterSpec {
                    drug: drug_code(0),
                    hlt,
                    regime: ClusterRegime::Concordant,
                    multiplier: 2.5,
                    onset_offset: 4,
                });
            }
            "discordant_cluster" => {
                let hlt = pick_hlt(0xD15C);
                s.clusters.push(ClusterSpec {
                    drug: drug_code(0),
                    hlt,
                    regime: ClusterRegime::Discordant,
                    multiplier: 3.0,
                    onset_offset: 4,
                });
            }
            "dominated_method" => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0D0);
                let mut pts: Vec<usize> = (0..s.tree.pt_count()).collect();
                pts.shuffle(&mut rng);
                for (i, &pt) in pts.iter().take(10 * s.n_drugs).enumerate() {
                    s.planted.push(PlantedSignal {
                        drug: drug_code(i % s.n_drugs),
                        pt: TreeShape::pt_code(pt),
                        multiplier: rng.random_range(1.5..4.0),
                        onset: s.first_quarter.offset(rng.random_range(2..8)),
                    });
                }
            }
            "empty" => {
                s.reports_per_quarter = 0;
                s.negatives_per_drug = 0;
            }
            other => {
                return Err(Error::Validation(format!(
                    "unknown scenario `{other}` (presets: {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(s)
    }

    pub fn last_quarter(&self) -> QuarterIndex {
        self.first_quarter.offset(self.n_quarters as i64 - 1)
    }

    pub fn drugs(&self) -> Vec<String> {
        (0..self.n_drugs).map(drug_code).collect()
    }

    /// Planted signals after expanding clusters, sorted by drug and PT.
    pub fn planted_signals(&self) -> Vec<PlantedSignal> {
        let mut out = self.planted.clone();
        for c in &self.clusters {
            let onset = self.first_quarter.offset(c.onset_offset);
            let pts: Vec<usize> = match c.regime {
                ClusterRegime::Concordant => self.tree.pts_of_hlt(c.hlt).collect(),
                ClusterRegime::Discordant => vec![self.tree.pts_of_hlt(c.hlt).start],
            };
            for p in pts {
                out.push(PlantedSignal {
                    drug: c.drug.clone(),
                    pt: TreeShape::pt_code(p),
                    multiplier: c.multiplier,
                    onset,
                });
            }
        }
        out.sort_by(|a, b| (&a.drug, &a.pt).cmp(&(&b.drug, &b.pt)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tree;
        if t.socs == 0 || t.hlgts_per_soc == 0 || t.hlts_per_hlgt == 0 || t.pts_per_hlt == 0 {
            return Err(Error::Validation(
                "every tree level needs at least one node".into(),
            ));
        }
        if self.n_drugs == 0 || self.n_quarters == 0 {
            return Err(Error::Validation(
                "need at least one drug and one quarter".into(),
            ));
        }
        if !(self.mean_events > 0.0) || !(0.0..=1.0).contains(&self.second_drug_rate) {
            return Err(Error::Validation("bad event or second-drug rate".into()));
        }
        if self.n_drugs > 99 {
            return Err(Error::Validation("at most 99 drugs".into()));
        }
        for c in &self.clusters {
            if c.hlt >= t.hlt_count() {
                return Err(Error::Validation(format!(
                    "cluster HLT {} out of range",
                    c.hlt
                )));
            }
            if c.regime == ClusterRegime::Concordant && t.sibling_ssm() <= self.min_ssm {
                return Err(Error::Validation(format!(
                    "infeasible concordant regime: sibling similarity {:.4} does not exceed \
                     min_ssm {}; the HLT must carry IC m with m/(4-3m) > min_ssm, i.e. \
                     ln(pts_per_hlt+1)/ln(N) < {:.4} (now {:.4}); deepen or widen the \
                     tree above the HLT level",
                    t.sibling_ssm(),
                    self.min_ssm,
                    1.0 - 4.0 * self.min_ssm / (1.0 + 3.0 * self.min_ssm),
                    ((t.pts_per_hlt + 1) as f64).ln() / (t.concept_count() as f64).ln()
                )));
            }
        }
        let drugs: BTreeSet<String> = self.drugs().into_iter().collect();
        let mut seen = BTreeSet::new();
        for p in self.planted_signals() {
            if !(p.multiplier >= 1.0) {
                return Err(Error::Validation(format!(
                    "planted {}/{}: multiplier {} below 1",
                    p.drug, p.pt, p.multiplier
                )));
            }
            if !drugs.contains(&p.drug) {
                return Err(Error::Validation(format!(
                    "planted drug {} unknown",
                    p.drug
                )));
            }
            let idx = pt_index(&p.pt).filter(|&i| i < t.pt_count());
            if idx.is_none() {
                return Err(Error::Validation(format!("planted PT {} unknown", p.pt)));
            }
            if !seen.insert((p.drug.clone(), p.pt.clone())) {
                return Err(Error::Validation(format!(
                    "{}/{} planted twice",
                    p.drug, p.pt
                )));
            }
        }
        Ok(())
    }
}

pub fn drug_code(i: usize) -> String {
    format!("D{:02}", i + 1)
}

fn pt_index(code: &str) -> Option<usize> {
    code.strip_prefix("PT")?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairCount {
    pub drug: String,
    pub pt: String,
    pub quarter: QuarterIndex,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub drug: String,
    pub pt: String,
    pub multiplier: f64,
    pub onset: QuarterIndex,
    pub label_quarter: QuarterIndex,
}

/// Exact description of the generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    /// Full generator input, so the files can be regenerated.
    pub spec: Scenario,
    pub first_quarter: QuarterIndex,
    pub last_quarter: QuarterIndex,
    pub concept_count: usize,
    pub sibling_ssm: f64,
    pub cousin_ssm: f64,
    pub reports_per_quarter: BTreeMap<QuarterIndex, u64>,
    /// Non-zero (drug, PT, quarter) co-report counts, sorted.
    pub pair_counts: Vec<PairCount>,
    pub planted: Vec<PlantedTruth>,
    pub negatives: Vec<(String, String)>,
    pub ontology_sha256: String,
    pub reference_sha256: String,
    pub reports_sha256: String,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("manifest", e.line(), e.to_string()))
    }
}

/// Emitted file contents plus their manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub reports: String,
    pub ontology: String,
    pub reference: String,
    pub manifest: Manifest,
}

pub const REPORTS_FILE: &str = "reports.tsv";
pub const ONTOLOGY_FILE: &str = "ontology.tsv";
pub const REFERENCE_FILE: &str = "reference.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Generated {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            (REPORTS_FILE, self.reports.as_str()),
            (ONTOLOGY_FILE, self.ontology.as_str()),
            (REFERENCE_FILE, self.reference.as_str()),
            (MANIFEST_FILE, &self.manifest.to_json()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn store(&self) -> Result<ReportStore> {
        ReportStore::parse(&self.reports, REPORTS_FILE, &LoadOptions::default())
    }

    pub fn reference_set(&self) -> Result<ReferenceSet> {
        ReferenceSet::parse(&self.reference, REFERENCE_FILE)
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Draws the scenario. Byte-identical output for identical scenarios.
pub fn generate(scenario: &Scenario) -> Result<Generated> {
    scenario.validate()?;
    let tree = scenario.tree;
    let n_pts = tree.pt_count();
    let drugs = scenario.drugs();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let spread = LogNormal::new(0.0, scenario.rate_spread.max(0.0))
        .map_err(|e| Error::Validation(format!("rate_spread: {e}")))?;
    let raw: Vec<f64> = (0..n_pts).map(|_| spread.sample(&mut rng)).collect();
    let total: f64 = raw.iter().sum();
    let base: Vec<f64> = raw
        .iter()
        .map(|r| (r / total * scenario.mean_events).min(0.5))
        .collect();

    let planted = scenario.planted_signals();
    // (drug index, pt index) → (multiplier, onset)
    let boosts: BTreeMap<(usize, usize), (f64, QuarterIndex)> = planted
        .iter()
        .map(|p| {
            let d = drugs.iter().position(|x| x == &p.drug).unwrap();
            ((d, pt_index(&p.pt).unwrap()), (p.multiplier, p.onset))
        })
        .collect();

    let mut reports = String::new();
    let mut per_quarter = BTreeMap::new();
    let mut pair_counts: BTreeMap<(usize, usize, QuarterIndex), u64> = BTreeMap::new();
    let mut next_id = 1usize;
    let mut probs = vec![0.0; n_pts];
    for qi in 0..scenario.n_quarters {
        let quarter = scenario.first_quarter.offset(qi as i64);
        let mut emitted = 0u64;
        for _ in 0..scenario.reports_per_quarter {
            let first = rng.random_range(0..drugs.len());
            let mut ds = vec![first];
            if drugs.len() > 1 && rng.random_bool(scenario.second_drug_rate) {
                let mut second = rng.random_range(0..drugs.len() - 1);
                if second >= first {
                    second += 1;
                }
                ds.push(second);
                ds.sort_unstable();
            }
            probs.copy_from_slice(&base);
            for &d in &ds {
                for (&(bd, bp), &(mult, onset)) in boosts.range((d, 0)..(d + 1, 0)) {
                    debug_assert_eq!(bd, d);
                    if quarter >= onset {
                        probs[bp] = (base[bp] * mult).min(1.0).max(probs[bp]);
                    }
                }
            }
            let events: Vec<usize> = (0..n_pts)
                .filter(|&p| rng.random::<f64>() < probs[p])
                .collect();
            if events.is_empty() {
                continue;
            }
            emitted += 1;
            let _ = writeln!(
                reports,
                "R{next_id:07}\t{quarter}\t{}\t{}",
                ds.iter()
                    .map(|&d| drugs[d].as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
                events
                    .iter()
                    .map(|&p| TreeShape::pt_code(p))
                    .collect::<Vec<_>>()
                    .join(";")
            );
            next_id += 1;
            for &d in &ds {
                for &p in &events {
                    *pair_counts.entry((d, p, quarter)).or_default() += 1;
                }
            }
        }
        per_quarter.insert(quarter, emitted);
    }

    // Negatives: PTs outside every HLT that holds a positive of the drug.
    let mut negatives = Vec::new();
    for (d, drug) in drugs.iter().enumerate() {
        let blocked: BTreeSet<usize> = planted
            .iter()
            .filter(|p| &p.drug == drug)
            .map(|p| tree.hlt_of(pt_index(&p.pt).unwrap()))
            .collect();
        let mut pool: Vec<usize> = (0..n_pts)
            .filter(|&p| !blocked.contains(&tree.hlt_of(p)))
            .collect();
        pool.shuffle(&mut rng);
        let mut chosen: Vec<usize> = pool.into_iter().take(scenario.negatives_per_drug).collect();
        chosen.sort_unstable();
        negatives.extend(
            chosen
                .into_iter()
                .map(|p| (drugs[d].clone(), TreeShape::pt_code(p))),
        );
    }

    let truth: Vec<PlantedTruth> = planted
        .iter()
        .map(|p| PlantedTruth {
            drug: p.drug.clone(),
            pt: p.pt.clone(),
            multiplier: p.multiplier,
            onset: p.onset,
            label_quarter: p.onset.offset(scenario.label_lag),
        })
        .collect();
    let mut entries: Vec<ReferenceEntry> = truth
        .iter()
        .map(|t| ReferenceEntry::positive(&t.drug, &t.pt, t.label_quarter))
        .collect();
    entries.extend(
        negatives
            .iter()
            .map(|(d, p)| ReferenceEntry::negative(d, p)),
    );
    let reference = ReferenceSet::from_entries(entries)?.to_text();
    let ontology = tree.ontology_text();

    let manifest = Manifest {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        spec: scenario.clone(),
        first_quarter: scenario.first_quarter,
        last_quarter: scenario.last_quarter(),
        concept_count: tree.concept_count(),
        sibling_ssm: tree.sibling_ssm(),
        cousin_ssm: tree.cousin_ssm(),
        reports_per_quarter: per_quarter,
        pair_counts: pair_counts
            .into_iter()
            .map(|((d, p, quarter), count)| PairCount {
                drug: drugs[d].clone(),
                pt: TreeShape::pt_code(p),
                quarter,
                count,
            })
            .collect(),
        planted: truth,
        negatives,
        ontology_sha256: sha256_hex(&ontology),
        reference_sha256: sha256_hex(&reference),
        reports_sha256: sha256_hex(&reports),
    };
    Ok(Generated {
        reports,
        ontology,
        reference,
        manifest,
    })
}

/// Result of re-counting files against a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestCheck {
    Match,
    /// Names the first differing record.
    Mismatch(String),
}

impl ManifestCheck {
    pub fn is_match(&self) -> bool {
        *self == ManifestCheck::Match
    }
}

/// Line number where `reports` departs from a fresh generation of the
/// manifest's scenario.
fn first_differing_line(reports: &str, manifest: &Manifest) -> Option<usize> {
    let regenerated = generate(&manifest.spec).ok()?.reports;
    let mut ours = regenerated.lines();
    let mut theirs = reports.lines();
    let mut n = 0;
    loop {
        n += 1;
        match (ours.next(), theirs.next()) {
            (None, None) => return None,
            (a, b) if a != b => return Some(n),
            _ => {}
        }
    }
}

/// Re-counts the reports file and compares it, the ontology and the
/// reference file with the manifest.
pub fn verify_manifest(
    reports: &str,
    ontology: &str,
    reference: &str,
    manifest: &Manifest,
) -> ManifestCheck {
    let mut per_quarter: BTreeMap<QuarterIndex, u64> = BTreeMap::new();
    let mut counts: BTreeMap<(String, String, QuarterIndex), u64> = BTreeMap::new();
    let mut first_line: BTreeMap<(String, String, QuarterIndex), usize> = BTreeMap::new();
    for (i, line) in reports.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [_, quarter, drugs, events] = fields.as_slice() else {
            return ManifestCheck::Mismatch(format!(
                "{REPORTS_FILE} line {lineno}: malformed record"
            ));
        };
        let Ok(quarter) = quarter.parse::<QuarterIndex>() else {
            return ManifestCheck::Mismatch(format!("{REPORTS_FILE} line {lineno}: bad quarter"));
        };
        *per_quarter.entry(quarter).or_default() += 1;
        let drugs: BTreeSet<&str> = drugs.split(';').filter(|s| !s.is_empty()).collect();
        let events: BTreeSet<&str> = events.split(';').filter(|s| !s.is_empty()).collect();
        for d in &drugs {
            for e in &events {
                let key = (d.to_string(), e.to_string(), quarter);
                first_line.entry(key.clone()).or_insert(lineno);
                *counts.entry(key).or_default() += 1;
            }
        }
    }

    let expected: BTreeMap<(String, String, QuarterIndex), u64> = manifest
        .pair_counts
        .iter()
        .map(|c| ((c.drug.clone(), c.pt.clone(), c.quarter), c.count))
        .collect();
    let keys: BTreeSet<_> = expected.keys().chain(counts.keys()).cloned().collect();
    for key in keys {
        let (m, f) = (
            expected.get(&key).copied().unwrap_or(0),
            counts.get(&key).copied().unwrap_or(0),
        );
        if m != f {
            let (d, p, q) = &key;
            let line = first_differing_line(reports, manifest)
                .or_else(|| first_line.get(&key).copied())
                .map(|l| format!(" (first differing line {l})"))
                .unwrap_or_default();
            return ManifestCheck::Mismatch(format!(
                "pair {d}/{p} at {q}: manifest {m}, file {f}{line}"
            ));
        }
    }
    let quarters: BTreeSet<_> = manifest
        .reports_per_quarter
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(q, _)| *q)
        .chain(per_quarter.keys().copied())
        .collect();
    for q in quarters {
        let m = manifest.reports_per_quarter.get(&q).copied().unwrap_or(0);
        let f = per_quarter.get(&q).copied().unwrap_or(0);
        if m != f {
            return ManifestCheck::Mismatch(format!("report count at {q}: manifest {m}, file {f}"));
        }
    }
    if sha256_hex(reports) != manifest.reports_sha256 {
        return ManifestCheck::Mismatch(format!(
            "{REPORTS_FILE}: counts agree but the content digest differs"
        ));
    }
    if sha256_hex(ontology) != manifest.ontology_sha256 {
        return ManifestCheck::Mismatch(format!("{ONTOLOGY_FILE}: content digest differs"));
    }
    if sha256_hex(reference) != manifest.reference_sha256 {
        return ManifestCheck::Mismatch(format!("{REFERENCE_FILE}: content digest differs"));
    }
    ManifestCheck::Match
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{IntrinsicIc, OntologyGraph};

    fn small(name: &str, seed: u64) -> Scenario {
        let mut s = Scenario::preset(name, seed).unwrap();
        s.reports_per_quarter = 200;
        s.n_quarters = 6;
        s
    }

    #[test]
    fn tree_similarities_match_graph() {
        let tree = TreeShape::default();
        assert_eq!(tree.concept_count(), 305);
        let graph = OntologyGraph::parse(&tree.ontology_text(), "tree").unwrap();
        assert_eq!(graph.len(), 305);
        let ic = IntrinsicIc::compute(&graph).unwrap();
        let sib = graph.sokal(&ic, "PT0000", "PT0001").unwrap();
        let cousin = graph.sokal(&ic, "PT0000", "PT0005").unwrap();
        assert!((sib - tree.sibling_ssm()).abs() < 1e-12);
        assert!((cousin - tree.cousin_ssm()).abs() < 1e-12);
        assert!(sib > 0.3 && cousin < 0.3);
        assert_eq!(graph.hlgt_neighbors("PT0000").unwrap().len(), 19);
        assert_eq!(graph.hlt_of("PT0007").unwrap().len(), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = small("concordant_cluster", 11);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = generate(&small("concordant_cluster", 12)).unwrap();
        assert_ne!(generate(&s).unwrap().reports, other.reports);
    }

    #[test]
    fn concordant_cluster_lists_five_positives() {
        let g = generate(&small("concordant_cluster", 3)).unwrap();
        assert_eq!(g.manifest.planted.len(), 5);
        let reference = g.reference_set().unwrap();
        assert_eq!(reference.positives().count(), 5);
        assert_eq!(reference.negatives().count(), 4 * 20);
        let graph = OntologyGraph::parse(&g.ontology, "o").unwrap();
        assert!(crate::eval::check_negative_controls(&reference, &graph).is_empty());
        for p in &g.manifest.planted {
            assert_eq!(p.label_quarter, p.onset.offset(4));
        }
    }

    #[test]
    fn store_counts_match_manifest() {
        let g = generate(&small("dominated_method", 5)).unwrap();
        let store = g.store().unwrap();
        let total: u64 = g.manifest.reports_per_quarter.values().sum();
        assert_eq!(store.len() as u64, total);
        let mut cum: BTreeMap<(String, String), u64> = BTreeMap::new();
        let last = g.manifest.last_quarter;
        for c in &g.manifest.pair_counts {
            *cum.entry((c.drug.clone(), c.pt.clone())).or_default() += c.count;
        }
        for ((d, p), n) in cum {
            assert_eq!(store.pair_count(&d, &p, last), n);
        }
    }

    #[test]
    fn verify_detects_edits() {
        let g = generate(&small("null", 9)).unwrap();
        let m = &g.manifest;
        assert!(verify_manifest(&g.reports, &g.ontology, &g.reference, m).is_match());
        // Drop one event from the third report.
        let mut lines: Vec<String> = g.reports.lines().map(str::to_string).collect();
        let fields: Vec<&str> = lines[2].split('\t').collect();
        let events: Vec<&str> = fields[3].split(';').collect();
        let replacement = if events.len() > 1 {
            events[1..].join(";")
        } else {
            "PT9999".to_string()
        };
        lines[2] = format!(
            "{}\t{}\t{}\t{}",
            fields[0], fields[1], fields[2], replacement
        );
        let edited = lines.join("\n") + "\n";
        match verify_manifest(&edited, &g.ontology, &g.reference, m) {
            ManifestCheck::Mismatch(msg) => assert!(msg.contains("line 3)"), "{msg}"),
            ManifestCheck::Match => panic!("edit not detected"),
        }
        let json = m.to_json();
        assert_eq!(&Manifest::from_json(&json).unwrap(), m);
    }

    #[test]
    fn empty_scenario_verifies() {
        let g = generate(&Scenario::preset("empty", 1).unwrap()).unwrap();
        assert!(g.reports.is_empty());
        assert!(g.manifest.pair_counts.is_empty());
        assert!(verify_manifest(&g.reports, &g.ontology, &g.reference, &g.manifest).is_match());
    }

    #[test]
    fn infeasible_regime_is_explained() {
        let mut s = Scenario::preset("concordant_cluster", 1).unwrap();
        s.tree = TreeShape {
            socs: 3,
            hlgts_per_soc: 2,
            hlts_per_hlgt: 3,
            pts_per_hlt: 5,
        };
        s.clusters[0].hlt = 0;
        let err = generate(&s).unwrap_err().to_string();
        assert!(err.contains("infeasible"), "{err}");
        assert!(Scenario::preset("nope", 1).is_err());
    }

    #[test]
    fn null_scenario_is_near_independence() {
        let s = Scenario::preset("null", 4).unwrap();
        let g = generate(&s).unwrap();
        let store = g.store().unwrap();
        let last = s.last_quarter();
        let mut log_oe = Vec::new();
        for (d, p) in store.active_pairs(last, 30) {
            log_oe.push(
                store
                    .contingency(&d, &p, last)
                    .observed_expected()
                    .unwrap()
                    .ln(),
            );
        }
        assert!(log_oe.len() > 100);
        let mean = log_oe.iter().sum::<f64>() / log_oe.len() as f64;
        assert!(mean.abs() < 0.05, "mean log O/E {mean}");
    }
}
