//! Per-pair signal pipelines for the three methods and their batch runner.
//!
//! `IC` is the plain Dirichlet–multinomial posterior. `IC_SSM` and `IC_HLGT`
//! borrow from related events reported with the same drug: the former from
//! PTs whose similarity to the target exceeds `min_ssm`, the latter from all
//! PTs sharing an HLGT, each with similarity 1. Both borrowing methods run the
//! same code path once their neighbor lists are fixed.

use std::collections::{btree_map, BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::borrow::{
    fixed_effect_map, mixture_posterior, random_effects_map, robustify, BorrowSource, MapMode,
    MixturePosterior, RemlOptions, WeightPolicy, DEFAULT_VAGUE_SD,
};
use crate::error::{Error, Result};
use crate::ic::{
    normal_approx, pair_seed, posterior_ic, DirichletPrior, IcPosterior, DEFAULT_PRIOR_STRENGTH,
    DEFAULT_SAMPLES,
};
use crate::ontology::{OntologyGraph, SimilarityMatrix, DEFAULT_MIN_SSM};
use crate::quarter::QuarterIndex;
use crate::reports::{ContingencyTable, ReportStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "IC_HLGT")]
    IcHlgt,
    #[serde(rename = "IC_SSM")]
    IcSsm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ic, Method::IcHlgt, Method::IcSsm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ic => "IC",
            Method::IcHlgt => "IC_HLGT",
            Method::IcSsm => "IC_SSM",
        }
    }

    pub fn borrows(self) -> bool {
        self != Method::Ic
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .to_ascii_uppercase()
            .replace(['-', ' '], "_")
            .as_str()
        {
            "IC" => Ok(Method::Ic),
            "IC_HLGT" => Ok(Method::IcHlgt),
            "IC_SSM" => Ok(Method::IcSsm),
            _ => Err(Error::Validation(format!(
                "unknown method `{s}` (expected IC, IC_HLGT or IC_SSM)"
            ))),
        }
    }
}

/// Knobs shared by all methods. Defaults are the reference parametrization:
/// `min_ssm = 0.3`, `w = max(SSM)`, `σ = 2`, threshold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub prior_strength: f64,
    pub min_ssm: f64,
    pub w_policy: WeightPolicy,
    pub vague_sd: f64,
    pub map_mode: MapMode,
    pub reml_tol: f64,
    pub reml_max_iter: usize,
    /// Adds the target's own IC summary to the τ² estimate.
    pub include_target_in_reml: bool,
    /// A signal is raised when the lower 95% bound exceeds this.
    pub threshold: f64,
    /// Pairs with fewer co-reports than this are not scored.
    pub min_a: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let reml = RemlOptions::default();
        AnalysisConfig {
            n_samples: DEFAULT_SAMPLES,
            seed: 20_150_101,
            prior_strength: DEFAULT_PRIOR_STRENGTH,
            min_ssm: DEFAULT_MIN_SSM,
            w_policy: WeightPolicy::MaxSsm,
            vague_sd: DEFAULT_VAGUE_SD,
            map_mode: MapMode::Random,
            reml_tol: reml.tol,
            reml_max_iter: reml.max_iter,
            include_target_in_reml: false,
            threshold: 0.0,
            min_a: 1,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.prior_strength > 0.0) {
            return bad(format!(
                "prior_strength must be > 0, got {}",
                self.prior_strength
            ));
        }
        if !(0.0..1.0).contains(&self.min_ssm) {
            return bad(format!("min_ssm must lie in [0, 1), got {}", self.min_ssm));
        }
        if !(self.vague_sd > 0.0) || !self.vague_sd.is_finite() {
            return bad(format!("vague_sd must be > 0, got {}", self.vague_sd));
        }
        if !(self.reml_tol > 0.0) || self.reml_max_iter == 0 {
            return bad("REML tolerance and iteration budget must be positive".into());
        }
        if self.min_a == 0 {
            return bad("min_a must be at least 1".into());
        }
        if self.threshold.is_nan() {
            return bad("threshold is NaN".into());
        }
        Ok(())
    }

    pub fn reml_options(&self) -> RemlOptions {
        RemlOptions {
            tol: self.reml_tol,
            max_iter: self.reml_max_iter,
        }
    }
}

/// Borrowing details of one result; absent for plain IC and when no source
/// was available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BorrowSummary {
    pub s_count: usize,
    pub tau2: f64,
    pub w: f64,
    pub w_tilde: f64,
    pub map_mu: f64,
    pub map_v: f64,
    pub map_mode: MapMode,
    pub reml_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub drug: String,
    pub event: String,
    pub cutoff: QuarterIndex,
    pub method: Method,
    pub table: ContingencyTable,
    pub oe: Option<f64>,
    pub pme: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub signal: bool,
    pub borrow: Option<BorrowSummary>,
}

impl PairResult {
    pub fn signal_at(&self, threshold: f64) -> bool {
        self.ci_low > threshold
    }
}

/// Which pairs a batch run scores at each cutoff.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSelection {
    /// Every pair with `a ≥ min_a` at the cutoff.
    Active,
    /// A fixed list, typically the reference set; pairs below `min_a` at a
    /// cutoff are skipped for that cutoff.
    Listed(Vec<(String, String)>),
}

/// Plain IC posteriors at one cutoff, computed once and shared by all
/// methods and all targets.
#[derive(Debug, Default)]
struct PosteriorCache {
    entries: HashMap<(String, String), (ContingencyTable, IcPosterior)>,
}

impl PosteriorCache {
    fn get(&self, drug: &str, pt: &str) -> Option<&(ContingencyTable, IcPosterior)> {
        // Tuple keys of owned strings cannot be borrowed as (&str, &str).
        self.entries.get(&(drug.to_string(), pt.to_string()))
    }
}

type MemoKey = (String, String, QuarterIndex);

/// Plain IC posteriors kept across runs that share `n_samples`, `seed` and
/// `prior_strength`, e.g. the points of a parameter sweep. Reuse never
/// changes results because every posterior is a pure function of its key.
#[derive(Debug, Default)]
pub struct PosteriorMemo {
    fingerprint: Mutex<Option<(usize, u64, u64)>>,
    entries: Mutex<HashMap<MemoKey, (ContingencyTable, IcPosterior)>>,
}

impl PosteriorMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, config: &AnalysisConfig) -> Result<()> {
        let key = (
            config.n_samples,
            config.seed,
            config.prior_strength.to_bits(),
        );
        let mut fp = self.fingerprint.lock().unwrap();
        match *fp {
            None => {
                *fp = Some(key);
                Ok(())
            }
            Some(k) if k == key => Ok(()),
            Some(_) => Err(Error::Validation(
                "posterior memo shared between runs with different IC settings".into(),
            )),
        }
    }
}

/// Signal analysis over one report store.
pub struct SignalAnalysis<'a> {
    store: &'a ReportStore,
    similarity: Option<&'a SimilarityMatrix>,
    hierarchy: Option<&'a OntologyGraph>,
    memo: Option<&'a PosteriorMemo>,
    config: AnalysisConfig,
}

impl<'a> SignalAnalysis<'a> {
    pub fn new(store: &'a ReportStore, config: AnalysisConfig) -> Result<Self> {
        config.validate()?;
        Ok(SignalAnalysis {
            store,
            similarity: None,
            hierarchy: None,
            memo: None,
            config,
        })
    }

    /// Same inputs, different knobs.
    pub fn with_config(&self, config: AnalysisConfig) -> Result<SignalAnalysis<'a>> {
        config.validate()?;
        if let Some(memo) = self.memo {
            memo.check(&config)?;
        }
        Ok(SignalAnalysis {
            store: self.store,
            similarity: self.similarity,
            hierarchy: self.hierarchy,
            memo: self.memo,
            config,
        })
    }

    /// Shares IC posteriors with other analyses through `memo`.
    pub fn with_memo(mut self, memo: &'a PosteriorMemo) -> Result<Self> {
        memo.check(&self.config)?;
        self.memo = Some(memo);
        Ok(self)
    }

    pub fn similarity(&self) -> Option<&'a SimilarityMatrix> {
        self.similarity
    }

    pub fn hierarchy(&self) -> Option<&'a OntologyGraph> {
        self.hierarchy
    }

    /// Similarity neighborhoods used by `IC_SSM`.
    pub fn with_similarity(mut self, sim: &'a SimilarityMatrix) -> Self {
        if sim.min_ssm() > self.config.min_ssm {
            log::warn!(
                "similarity matrix was built at min_ssm {} > configured {}; \
                 pairs in between are missing",
                sim.min_ssm(),
                self.config.min_ssm
            );
        }
        self.similarity = Some(sim);
        self
    }

    /// MedDRA groupings used by `IC_HLGT`.
    pub fn with_hierarchy(mut self, graph: &'a OntologyGraph) -> Self {
        self.hierarchy = Some(graph);
        self
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn store(&self) -> &ReportStore {
        self.store
    }

    /// Plain IC posterior for one pair; `None` when the pair has no
    /// co-report at the cutoff.
    pub fn ic_posterior(
        &self,
        drug: &str,
        pt: &str,
        cutoff: QuarterIndex,
    ) -> Result<Option<(ContingencyTable, IcPosterior)>> {
        let table = self.store.contingency(drug, pt, cutoff);
        if table.a == 0 {
            return Ok(None);
        }
        let prior = DirichletPrior::marginal_product(&table, self.config.prior_strength)?;
        let seed = pair_seed(self.config.seed, drug, pt, cutoff);
        let post = posterior_ic(&table, &prior, self.config.n_samples, seed)
            .map_err(|e| pair_context(e, drug, pt, cutoff))?;
        Ok(Some((table, post)))
    }

    fn require_similarity(&self) -> Result<&'a SimilarityMatrix> {
        self.similarity
            .ok_or_else(|| Error::Validation("IC_SSM needs a similarity matrix".into()))
    }

    fn require_hierarchy(&self) -> Result<&'a OntologyGraph> {
        self.hierarchy
            .ok_or_else(|| Error::Validation("IC_HLGT needs the MedDRA hierarchy".into()))
    }

    /// Candidate borrowing PTs with their similarity, sorted by code, before
    /// the co-report filter.
    pub fn candidates(&self, method: Method, pt: &str) -> Result<Vec<(String, f64)>> {
        match method {
            Method::Ic => Ok(Vec::new()),
            Method::IcSsm => {
                let sim = self.require_similarity()?;
                Ok(sim
                    .neighbors(pt)
                    .filter(|&(n, s)| s > self.config.min_ssm && n != pt)
                    .map(|(n, s)| (n.to_string(), s))
                    .collect())
            }
            Method::IcHlgt => {
                let graph = self.require_hierarchy()?;
                match graph.hlgt_neighbors(pt) {
                    Ok(set) => Ok(set.into_iter().map(|n| (n, 1.0)).collect()),
                    Err(Error::UnknownCode(_) | Error::NotPreferredTerm(_)) => {
                        log::warn!("PT {pt} is not a PT in the hierarchy; no HLGT borrowing");
                        Ok(Vec::new())
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Scores one pair from scratch. Returns `None` below `min_a`.
    pub fn analyze_pair(
        &self,
        method: Method,
        drug: &str,
        pt: &str,
        cutoff: QuarterIndex,
    ) -> Result<Option<PairResult>> {
        let table = self.store.contingency(drug, pt, cutoff);
        if table.a < self.config.min_a {
            return Ok(None);
        }
        let Some((table, target)) = self.ic_posterior(drug, pt, cutoff)? else {
            return Ok(None);
        };
        let candidates = self.candidates(method, pt)?;
        let mut sources = Vec::new();
        for (n, ssm) in candidates {
            if let Some((_, post)) = self.ic_posterior(drug, &n, cutoff)? {
                sources.push(source_from(&n, &post, ssm, drug, cutoff)?);
            }
        }
        self.finish(method, drug, pt, cutoff, table, &target, &sources)
            .map(Some)
    }

    /// Borrowing step shared by `IC_SSM` and `IC_HLGT`; plain IC when
    /// `method` is `IC` or `sources` is empty.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        method: Method,
        drug: &str,
        pt: &str,
        cutoff: QuarterIndex,
        table: ContingencyTable,
        target: &IcPosterior,
        sources: &[BorrowSource],
    ) -> Result<PairResult> {
        let base = |post: MixturePosterior, borrow: Option<BorrowSummary>| PairResult {
            drug: drug.to_string(),
            event: pt.to_string(),
            cutoff,
            method,
            table,
            oe: table.observed_expected(),
            pme: post.pme,
            variance: post.variance,
            ci_low: post.ci_low,
            ci_high: post.ci_high,
            signal: post.signal(self.config.threshold),
            borrow,
        };
        if method == Method::Ic || sources.is_empty() {
            let post = MixturePosterior::single(
                target.pme,
                target.variance,
                target.ci_low,
                target.ci_high,
            );
            return Ok(base(post, None));
        }
        let ctx = |e| pair_context(e, drug, pt, cutoff);
        let (ic, vic) = normal_approx(target).map_err(ctx)?;
        let map = match self.config.map_mode {
            MapMode::Fixed => fixed_effect_map(sources),
            MapMode::Random => {
                let extra: &[(f64, f64)] = if self.config.include_target_in_reml {
                    &[(ic, vic)]
                } else {
                    &[]
                };
                random_effects_map(sources, extra, &self.config.reml_options())
            }
        }
        .map_err(ctx)?;
        let prior =
            robustify(map, sources, self.config.vague_sd, self.config.w_policy).map_err(ctx)?;
        let post = mixture_posterior(&prior, ic, vic).map_err(ctx)?;
        let summary = BorrowSummary {
            s_count: map.s_count,
            tau2: map.tau2,
            w: prior.w,
            w_tilde: post.w_tilde,
            map_mu: map.mu,
            map_v: map.v,
            map_mode: map.mode,
            reml_converged: map.converged,
        };
        Ok(base(post, Some(summary)))
    }

    /// Scores the selected pairs at one cutoff with every requested method.
    /// Output is sorted by drug, event, then method.
    pub fn run_cutoff(
        &self,
        methods: &[Method],
        cutoff: QuarterIndex,
        selection: &PairSelection,
    ) -> Result<Vec<PairResult>> {
        let mut methods = methods.to_vec();
        methods.sort();
        methods.dedup();
        if methods.contains(&Method::IcSsm) {
            self.require_similarity()?;
        }
        if methods.contains(&Method::IcHlgt) {
            self.require_hierarchy()?;
        }

        let targets: Vec<(String, String)> = match selection {
            PairSelection::Active => self.store.active_pairs(cutoff, self.config.min_a),
            PairSelection::Listed(pairs) => {
                let mut pairs: Vec<_> = pairs
                    .iter()
                    .filter(|(d, p)| self.store.pair_count(d, p, cutoff) >= self.config.min_a)
                    .cloned()
                    .collect();
                pairs.sort();
                pairs.dedup();
                pairs
            }
        };

        // Neighbor lists per (method, PT), computed once.
        let mut neighbors: BTreeMap<(Method, &str), Vec<(String, f64)>> = BTreeMap::new();
        for &m in methods.iter().filter(|m| m.borrows()) {
            for (_, pt) in &targets {
                if let btree_map::Entry::Vacant(slot) = neighbors.entry((m, pt.as_str())) {
                    slot.insert(self.candidates(m, pt)?);
                }
            }
        }

        // Every posterior needed: the targets plus co-reported neighbors.
        let mut needed: Vec<(String, String)> = targets.clone();
        for (drug, pt) in &targets {
            for &m in methods.iter().filter(|m| m.borrows()) {
                for (n, _) in &neighbors[&(m, pt.as_str())] {
                    if self.store.pair_count(drug, n, cutoff) >= 1 {
                        needed.push((drug.clone(), n.clone()));
                    }
                }
            }
        }
        needed.sort();
        needed.dedup();

        let mut cache = PosteriorCache::default();
        if let Some(memo) = self.memo {
            let entries = memo.entries.lock().unwrap();
            needed.retain(
                |(d, p)| match entries.get(&(d.clone(), p.clone(), cutoff)) {
                    Some(hit) => {
                        cache.entries.insert((d.clone(), p.clone()), *hit);
                        false
                    }
                    None => true,
                },
            );
        }
        let computed: Vec<Option<(ContingencyTable, IcPosterior)>> = needed
            .par_iter()
            .map(|(d, p)| self.ic_posterior(d, p, cutoff))
            .collect::<Result<_>>()?;
        let fresh: Vec<_> = needed
            .into_iter()
            .zip(computed)
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect();
        if let Some(memo) = self.memo {
            let mut entries = memo.entries.lock().unwrap();
            for ((d, p), v) in &fresh {
                entries.insert((d.clone(), p.clone(), cutoff), *v);
            }
        }
        cache.entries.extend(fresh);

        let jobs: Vec<(&(String, String), Method)> = targets
            .iter()
            .flat_map(|t| methods.iter().map(move |&m| (t, m)))
            .collect();
        jobs.par_iter()
            .map(|&((drug, pt), method)| {
                let (table, target) = cache
                    .get(drug, pt)
                    .copied()
                    .expect("targets have a co-report at the cutoff");
                let mut sources = Vec::new();
                if method.borrows() {
                    for (n, ssm) in &neighbors[&(method, pt.as_str())] {
                        if let Some((_, post)) = cache.get(drug, n) {
                            sources.push(source_from(n, post, *ssm, drug, cutoff)?);
                        }
                    }
                }
                self.finish(method, drug, pt, cutoff, table, &target, &sources)
            })
            .collect()
    }

    /// Cumulative analysis at every quarter in `quarters`, in order.
    pub fn run(
        &self,
        methods: &[Method],
        quarters: &[QuarterIndex],
        selection: &PairSelection,
    ) -> Result<Vec<PairResult>> {
        if quarters.is_empty() {
            return Err(Error::Validation("empty quarter range".into()));
        }
        if methods.is_empty() {
            return Err(Error::Validation("no method selected".into()));
        }
        let mut out = Vec::new();
        for &q in quarters {
            log::info!("analysing cutoff {q}");
            out.extend(self.run_cutoff(methods, q, selection)?);
        }
        Ok(out)
    }
}

fn source_from(
    pt: &str,
    post: &IcPosterior,
    ssm: f64,
    drug: &str,
    cutoff: QuarterIndex,
) -> Result<BorrowSource> {
    let (ic, vic) = normal_approx(post).map_err(|e| pair_context(e, drug, pt, cutoff))?;
    BorrowSource::new(pt, ic, vic, ssm)
}

fn pair_context(e: Error, drug: &str, pt: &str, cutoff: QuarterIndex) -> Error {
    let ctx = format!("pair {drug}/{pt} at {cutoff}");
    match e {
        Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
        Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
        other => other,
    }
}

/// End-to-end `IC_SSM` for one pair.
pub fn ic_ssm(
    store: &ReportStore,
    sim: &SimilarityMatrix,
    drug: &str,
    pt: &str,
    cutoff: QuarterIndex,
    config: &AnalysisConfig,
) -> Result<Option<PairResult>> {
    SignalAnalysis::new(store, config.clone())?
        .with_similarity(sim)
        .analyze_pair(Method::IcSsm, drug, pt, cutoff)
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

const CSV_HEADER: &str = "drug,event,cutoff,a,b,c,d,oe,pme,var,ci_low,ci_high,signal,\
method,s_count,tau2,w,w_tilde,map_mu,map_v";

fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

/// Batch results as CSV. Borrowing columns are empty for plain IC rows and
/// for borrowing rows without any source.
pub fn results_csv(results: &[PairResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let t = r.table;
        let borrow = match &r.borrow {
            Some(b) => format!(
                "{},{},{},{},{},{}",
                b.s_count,
                fmt_f(b.tau2),
                fmt_f(b.w),
                fmt_f(b.w_tilde),
                fmt_f(b.map_mu),
                fmt_f(b.map_v)
            ),
            None => "0,,,,,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.drug,
            r.event,
            r.cutoff,
            t.a,
            t.b,
            t.c,
            t.d,
            r.oe.map(fmt_f).unwrap_or_default(),
            fmt_f(r.pme),
            fmt_f(r.variance),
            fmt_f(r.ci_low),
            fmt_f(r.ci_high),
            r.signal,
            r.method,
            borrow
        ));
    }
    out
}
