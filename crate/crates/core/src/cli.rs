//! Command-line front end.
//!
//! Settings come from three layers: built-in defaults (the reference
//! parametrization), an optional `--config` TOML file of `key = value` lines,
//! and command-line flags, each overriding the previous one. Every command
//! that writes outputs also writes `effective_config.toml` and a `README.md`
//! describing the files next to them.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! failure. Errors are printed to stderr as one JSON object.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    results_csv, with_threads, AnalysisConfig, Method, PairSelection, PosteriorMemo, SignalAnalysis,
};
use crate::borrow::{MapMode, WeightPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    bootstrap, bootstrap_json, check_negative_controls, compare_csv, compare_delta_csv,
    compare_methods, detections_csv, metrics_csv, parameter_sweep, quarterly_curves, records_for,
    run_quarters, score, sweep_csv, ReferenceSet, ScoreOptions, SweepGrid,
};
use crate::ontology::{build_similarity_matrix, IntrinsicIc, OntologyGraph, SimilarityMatrix};
use crate::quarter::QuarterIndex;
use crate::reports::{LoadOptions, ReportStore};
use crate::synth::{generate, verify_manifest, Manifest, Scenario, PRESETS};

/// Everything a run needs, as stored in `effective_config.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub reports: Option<PathBuf>,
    pub ontology: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// One drug code per line; other drugs are dropped from the reports.
    pub drugs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub methods: Vec<Method>,
    /// First analysis cutoff; defaults to the first quarter in the reports.
    pub first_quarter: Option<QuarterIndex>,
    /// Last analysis cutoff; defaults to the last quarter in the reports.
    pub last_quarter: Option<QuarterIndex>,
    pub strict_before: bool,
    /// Score only reference pairs in `run` (all active pairs otherwise).
    pub reference_only: bool,
    pub bootstrap_iter: usize,
    pub bootstrap_seed: u64,
    /// Method the others are compared against.
    pub baseline: Method,
    #[serde(flatten)]
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            reports: None,
            ontology: None,
            reference: None,
            drugs: None,
            out: None,
            methods: Method::ALL.to_vec(),
            first_quarter: None,
            last_quarter: None,
            strict_before: true,
            reference_only: false,
            bootstrap_iter: 1000,
            bootstrap_seed: 1,
            baseline: Method::IcSsm,
            analysis: AnalysisConfig::default(),
        }
    }
}

const PATH_KEYS: [&str; 7] = [
    "reports",
    "ontology",
    "reference",
    "drugs",
    "out",
    "first_quarter",
    "last_quarter",
];

impl RunConfig {
    /// Parses a config file, rejecting unknown keys.
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::parse(
                source_name,
                line_of(text, e.span()),
                e.message().to_string(),
            )
        })?;
        let known: BTreeSet<String> = toml::Table::try_from(RunConfig::default())
            .expect("default config serializes")
            .keys()
            .cloned()
            .chain(PATH_KEYS.iter().map(|k| k.to_string()))
            .collect();
        if let Some(k) = table.keys().find(|k| !known.contains(*k)) {
            return Err(Error::Validation(format!(
                "{source_name}: unknown config key `{k}`"
            )));
        }
        table.try_into().map_err(|e: toml::de::Error| {
            Error::parse(
                source_name,
                line_of(text, e.span()),
                e.message().to_string(),
            )
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("config snapshot: {e}")))
    }

    fn validate(&self) -> Result<()> {
        self.analysis.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Validation("no method selected".into()));
        }
        if self.analysis.seed > i64::MAX as u64 || self.bootstrap_seed > i64::MAX as u64 {
            return Err(Error::Validation(format!(
                "seeds must not exceed {}",
                i64::MAX
            )));
        }
        Ok(())
    }
}

fn line_of(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map(|s| text[..s.start.min(text.len())].lines().count().max(1))
        .unwrap_or(0)
}

#[derive(Debug, Parser)]
#[command(
    name = "icssm",
    version,
    about = "IC signal detection with similarity-weighted dynamic borrowing"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file of `key = value` settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check input files and print a JSON summary.
    Validate(Inputs),
    /// Score pairs at every cutoff and write one results CSV per method.
    Run(RunArgs),
    /// Score the reference set: detections and quarterly metrics.
    Evaluate(RunArgs),
    /// Two-by-two comparisons, time to detection and bootstrap.
    Compare(CompareArgs),
    /// One-at-a-time parameter sensitivity grid.
    Sweep(SweepArgs),
    /// Write a synthetic scenario, or check files against a manifest.
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Default)]
pub struct Inputs {
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Drug filter file, one code per line.
    #[arg(long)]
    pub drugs: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct Knobs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated subset of IC, IC_HLGT, IC_SSM.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub first_quarter: Option<QuarterIndex>,
    #[arg(long)]
    pub last_quarter: Option<QuarterIndex>,
    #[arg(long)]
    pub min_ssm: Option<f64>,
    /// MAX_SSM or a fixed weight in [0, 1].
    #[arg(long)]
    pub w: Option<WeightPolicy>,
    #[arg(long)]
    pub vague_sd: Option<f64>,
    /// FIXED or RANDOM.
    #[arg(long)]
    pub map_mode: Option<MapMode>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_a: Option<u64>,
    #[arg(long)]
    pub include_target_in_reml: Option<bool>,
    #[arg(long)]
    pub strict_before: Option<bool>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub knobs: Knobs,
    /// Score only the reference pairs.
    #[arg(long)]
    pub reference_only: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub knobs: Knobs,
    /// Method compared against each of the others.
    #[arg(long)]
    pub baseline: Option<Method>,
    /// Bootstrap replicates; 0 skips the bootstrap.
    #[arg(long)]
    pub bootstrap_iter: Option<usize>,
    #[arg(long)]
    pub bootstrap_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[command(flatten)]
    pub knobs: Knobs,
    #[arg(long, value_delimiter = ',')]
    pub min_ssm_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub w_grid: Option<Vec<WeightPolicy>>,
    #[arg(long, value_delimiter = ',')]
    pub vague_sd_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub threshold_grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Preset: null, concordant_cluster, discordant_cluster, dominated_method, empty.
    #[arg(long, default_value = "concordant_cluster")]
    pub scenario: String,
    /// JSON scenario file; replaces the preset.
    #[arg(long)]
    pub scenario_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub reports_per_quarter: Option<usize>,
    #[arg(long)]
    pub quarters: Option<usize>,
    /// Verify the files in this directory against its manifest instead.
    #[arg(long)]
    pub check: Option<PathBuf>,
}

impl Inputs {
    fn apply(&self, c: &mut RunConfig) {
        if self.reports.is_some() {
            c.reports.clone_from(&self.reports);
        }
        if self.ontology.is_some() {
            c.ontology.clone_from(&self.ontology);
        }
        if self.reference.is_some() {
            c.reference.clone_from(&self.reference);
        }
        if self.drugs.is_some() {
            c.drugs.clone_from(&self.drugs);
        }
    }
}

impl Knobs {
    fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        if self.out.is_some() {
            c.out.clone_from(&self.out);
        }
        set(&mut c.methods, &self.methods);
        if self.first_quarter.is_some() {
            c.first_quarter = self.first_quarter;
        }
        if self.last_quarter.is_some() {
            c.last_quarter = self.last_quarter;
        }
        let a = &mut c.analysis;
        set(&mut a.min_ssm, &self.min_ssm);
        set(&mut a.w_policy, &self.w);
        set(&mut a.vague_sd, &self.vague_sd);
        set(&mut a.map_mode, &self.map_mode);
        set(&mut a.threshold, &self.threshold);
        set(&mut a.n_samples, &self.n_samples);
        set(&mut a.seed, &self.seed);
        set(&mut a.min_a, &self.min_a);
        set(&mut a.include_target_in_reml, &self.include_target_in_reml);
        set(&mut c.strict_before, &self.strict_before);
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let body = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{body}");
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

/// Executes a parsed command, writing data output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads;
    match cli.command {
        Command::Validate(inputs) => {
            inputs.apply(&mut config);
            cmd_validate(&config, stdout)
        }
        Command::Run(args) => {
            args.inputs.apply(&mut config);
            args.knobs.apply(&mut config);
            config.reference_only |= args.reference_only;
            with_threads(threads, || cmd_run(&config))?
        }
        Command::Evaluate(args) => {
            args.inputs.apply(&mut config);
            args.knobs.apply(&mut config);
            with_threads(threads, || cmd_evaluate(&config))?
        }
        Command::Compare(args) => {
            args.inputs.apply(&mut config);
            args.knobs.apply(&mut config);
            if let Some(b) = args.baseline {
                config.baseline = b;
            }
            if let Some(n) = args.bootstrap_iter {
                config.bootstrap_iter = n;
            }
            if let Some(s) = args.bootstrap_seed {
                config.bootstrap_seed = s;
            }
            with_threads(threads, || cmd_compare(&config))?
        }
        Command::Sweep(args) => {
            args.inputs.apply(&mut config);
            args.knobs.apply(&mut config);
            let mut grid = SweepGrid::default();
            if let Some(v) = args.min_ssm_grid {
                grid.min_ssm = v;
            }
            if let Some(v) = args.w_grid {
                grid.w = v;
            }
            if let Some(v) = args.vague_sd_grid {
                grid.vague_sd = v;
            }
            if let Some(v) = args.threshold_grid {
                grid.threshold = v;
            }
            with_threads(threads, || cmd_sweep(&config, &grid))?
        }
        Command::Generate(args) => cmd_generate(&args, stdout),
    }
}

/// Loaded inputs of one command.
struct Loaded {
    graph: Option<OntologyGraph>,
    store: ReportStore,
    reference: Option<ReferenceSet>,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::Validation(format!("missing --{what}")))
}

fn load_drug_filter(path: &Path) -> Result<BTreeSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn load_inputs(config: &RunConfig, need_reference: bool) -> Result<Loaded> {
    let graph = config
        .ontology
        .as_ref()
        .map(OntologyGraph::load)
        .transpose()?;
    let needs_graph = config.methods.iter().any(|m| m.borrows());
    if needs_graph && graph.is_none() {
        return Err(Error::Validation(
            "IC_SSM and IC_HLGT need --ontology".into(),
        ));
    }
    let known: Option<std::collections::HashSet<String>> = graph.as_ref().map(|g| {
        g.preferred_terms()
            .into_iter()
            .map(str::to_string)
            .collect()
    });
    let filter = config.drugs.as_deref().map(load_drug_filter).transpose()?;
    let options = LoadOptions {
        window: None,
        known_events: known.as_ref(),
        drug_filter: filter.as_ref(),
    };
    let store = ReportStore::load(required(&config.reports, "reports")?, &options)?;
    let reference = match &config.reference {
        Some(p) => Some(ReferenceSet::load(p)?),
        None if need_reference => return Err(Error::Validation("missing --reference".into())),
        None => None,
    };
    Ok(Loaded {
        graph,
        store,
        reference,
    })
}

fn quarters(config: &RunConfig, store: &ReportStore) -> Result<Vec<QuarterIndex>> {
    let first = config.first_quarter.or(store.first_quarter());
    let last = config.last_quarter.or(store.last_quarter());
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::Validation(
            "empty quarter range: the reports are empty and no range was given".into(),
        ));
    };
    let qs = QuarterIndex::range_inclusive(first, last);
    if qs.is_empty() {
        return Err(Error::Validation(format!(
            "empty quarter range {first}..{last}"
        )));
    }
    Ok(qs)
}

fn similarity_for(
    config: &RunConfig,
    graph: Option<&OntologyGraph>,
    store: &ReportStore,
    min_ssm: f64,
) -> Result<Option<SimilarityMatrix>> {
    if !config.methods.contains(&Method::IcSsm) {
        return Ok(None);
    }
    let graph = graph.expect("checked when loading");
    let ic = IntrinsicIc::compute(graph)?;
    let events: Vec<&str> = store.events().into_iter().collect();
    Ok(Some(build_similarity_matrix(graph, &ic, &events, min_ssm)?))
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = required(&config.out, "out")?.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_provenance(dir: &Path, config: &RunConfig) -> Result<()> {
    write_file(dir, "effective_config.toml", &config.to_toml()?)?;
    write_file(dir, "README.md", OUTPUTS_README)
}

fn analysis<'a>(
    config: &RunConfig,
    loaded: &'a Loaded,
    sim: Option<&'a SimilarityMatrix>,
) -> Result<SignalAnalysis<'a>> {
    let mut a = SignalAnalysis::new(&loaded.store, config.analysis.clone())?;
    if let Some(g) = &loaded.graph {
        a = a.with_hierarchy(g);
    }
    if let Some(s) = sim {
        a = a.with_similarity(s);
    }
    Ok(a)
}

fn cmd_validate(config: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let graph = config
        .ontology
        .as_ref()
        .map(OntologyGraph::load)
        .transpose()?;
    let known: Option<std::collections::HashSet<String>> = graph.as_ref().map(|g| {
        g.preferred_terms()
            .into_iter()
            .map(str::to_string)
            .collect()
    });
    let filter = config.drugs.as_deref().map(load_drug_filter).transpose()?;
    let store = config
        .reports
        .as_ref()
        .map(|p| {
            ReportStore::load(
                p,
                &LoadOptions {
                    window: None,
                    known_events: known.as_ref(),
                    drug_filter: filter.as_ref(),
                },
            )
        })
        .transpose()?;
    let reference = config
        .reference
        .as_ref()
        .map(ReferenceSet::load)
        .transpose()?;
    if graph.is_none() && store.is_none() && reference.is_none() {
        return Err(Error::Validation(
            "nothing to validate: pass --ontology, --reports or --reference".into(),
        ));
    }
    let flags = match (&reference, &graph) {
        (Some(r), Some(g)) => Some(check_negative_controls(r, g)),
        _ => None,
    };
    let summary = serde_json::json!({
        "ontology": graph.as_ref().map(|g| g.summary()),
        "reports": store.as_ref().map(|s| serde_json::json!({
            "summary": s.summary(),
            "warnings": s.warnings(),
        })),
        "reference": reference.as_ref().map(|r| serde_json::json!({
            "entries": r.len(),
            "positives": r.positives().count(),
            "negatives": r.negatives().count(),
            "negative_control_flags": flags,
        })),
    });
    writeln!(
        stdout,
        "{}",
        serde_json::to_string_pretty(&summary).unwrap()
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_run(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let loaded = load_inputs(config, config.reference_only)?;
    let qs = quarters(config, &loaded.store)?;
    let dir = output_dir(config)?;
    let sim = similarity_for(
        config,
        loaded.graph.as_ref(),
        &loaded.store,
        config.analysis.min_ssm,
    )?;
    let a = analysis(config, &loaded, sim.as_ref())?;
    let selection = match (&loaded.reference, config.reference_only) {
        (Some(r), true) => PairSelection::Listed(r.pairs()),
        _ => PairSelection::Active,
    };
    let results = a.run(&config.methods, &qs, &selection)?;
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    for m in methods {
        let rows: Vec<_> = results.iter().filter(|r| r.method == m).cloned().collect();
        write_file(&dir, &format!("results_{m}.csv"), &results_csv(&rows))?;
    }
    write_provenance(&dir, config)
}

fn evaluate_records(
    config: &RunConfig,
    loaded: &Loaded,
) -> Result<(Vec<QuarterIndex>, Vec<crate::eval::DetectionRecord>)> {
    let qs = quarters(config, &loaded.store)?;
    let sim = similarity_for(
        config,
        loaded.graph.as_ref(),
        &loaded.store,
        config.analysis.min_ssm,
    )?;
    let a = analysis(config, loaded, sim.as_ref())?;
    let reference = loaded.reference.as_ref().expect("loaded with reference");
    let (_, records) = run_quarters(&a, &config.methods, &qs, reference)?;
    Ok((qs, records))
}

fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let loaded = load_inputs(config, true)?;
    let dir = output_dir(config)?;
    let (qs, records) = evaluate_records(config, &loaded)?;
    let reference = loaded.reference.as_ref().unwrap();
    let options = ScoreOptions {
        strict_before: config.strict_before,
    };
    let end = *qs.last().unwrap();
    let mut rows = Vec::new();
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    for &m in &methods {
        let rs = records_for(&records, m);
        rows.push((
            "overall".to_string(),
            end,
            m,
            score(&rs, reference, end, &options),
        ));
    }
    for &m in &methods {
        let rs = records_for(&records, m);
        for (q, report) in quarterly_curves(&rs, reference, &qs, &options) {
            rows.push(("quarterly".to_string(), q, m, report));
        }
    }
    write_file(&dir, "metrics.csv", &metrics_csv(&rows))?;
    write_file(&dir, "detections.csv", &detections_csv(&records))?;
    write_provenance(&dir, config)
}

fn cmd_compare(config: &RunConfig) -> Result<()> {
    config.validate()?;
    let mut config = config.clone();
    if !config.methods.contains(&config.baseline) {
        config.methods.push(config.baseline);
    }
    let loaded = load_inputs(&config, true)?;
    let dir = output_dir(&config)?;
    let (qs, records) = evaluate_records(&config, &loaded)?;
    let reference = loaded.reference.as_ref().unwrap();
    let options = ScoreOptions {
        strict_before: config.strict_before,
    };
    let end = *qs.last().unwrap();
    let base = records_for(&records, config.baseline);
    let mut others: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|&m| m != config.baseline)
        .collect();
    others.sort();
    others.dedup();
    let mut comparisons = Vec::new();
    let mut boots = Vec::new();
    for m in others {
        let other = records_for(&records, m);
        let mut c = compare_methods(&base, &other, reference, end, &options);
        // Empty record lists carry no method; name them explicitly.
        c.method_a = config.baseline;
        c.method_b = m;
        comparisons.push(c);
        if config.bootstrap_iter > 0 {
            let mut b = bootstrap(
                &base,
                &other,
                reference,
                end,
                &options,
                config.bootstrap_iter,
                config.bootstrap_seed,
            )?;
            b.method_a = config.baseline;
            b.method_b = m;
            boots.push(b);
        }
    }
    write_file(&dir, "compare.csv", &compare_csv(&comparisons))?;
    write_file(&dir, "compare_delta.csv", &compare_delta_csv(&comparisons))?;
    if config.bootstrap_iter > 0 {
        write_file(&dir, "bootstrap.json", &bootstrap_json(&boots))?;
    }
    write_file(&dir, "detections.csv", &detections_csv(&records))?;
    write_provenance(&dir, &config)
}

fn cmd_sweep(config: &RunConfig, grid: &SweepGrid) -> Result<()> {
    config.validate()?;
    for &v in &grid.min_ssm {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Validation(format!(
                "min_ssm grid value {v} outside [0, 1)"
            )));
        }
    }
    let loaded = load_inputs(config, true)?;
    let dir = output_dir(config)?;
    let qs = quarters(config, &loaded.store)?;
    let sim = similarity_for(
        config,
        loaded.graph.as_ref(),
        &loaded.store,
        grid.lowest_min_ssm(&config.analysis),
    )?;
    let memo = PosteriorMemo::new();
    let a = analysis(config, &loaded, sim.as_ref())?.with_memo(&memo)?;
    let reference = loaded.reference.as_ref().unwrap();
    let options = ScoreOptions {
        strict_before: config.strict_before,
    };
    let rows = parameter_sweep(
        &a,
        &config.methods,
        &qs,
        reference,
        grid,
        *qs.last().unwrap(),
        &options,
    )?;
    write_file(&dir, "sweep.csv", &sweep_csv(&rows))?;
    write_provenance(dir.as_path(), config)?;
    let grid_toml =
        toml::to_string(grid).map_err(|e| Error::Validation(format!("grid snapshot: {e}")))?;
    write_file(&dir, "sweep_grid.toml", &grid_toml)
}

fn cmd_generate(args: &GenerateArgs, stdout: &mut dyn Write) -> Result<()> {
    if let Some(dir) = &args.check {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let manifest = Manifest::from_json(&read(crate::synth::MANIFEST_FILE)?)?;
        let check = verify_manifest(
            &read(crate::synth::REPORTS_FILE)?,
            &read(crate::synth::ONTOLOGY_FILE)?,
            &read(crate::synth::REFERENCE_FILE)?,
            &manifest,
        );
        return match check {
            crate::synth::ManifestCheck::Match => {
                writeln!(stdout, "{}", serde_json::json!({ "manifest": "match" }))
                    .map_err(|e| Error::io("<stdout>", e))
            }
            crate::synth::ManifestCheck::Mismatch(msg) => Err(Error::Validation(format!(
                "files differ from manifest: {msg}"
            ))),
        };
    }
    let mut scenario = match &args.scenario_file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<Scenario>(&text)
                .map_err(|e| Error::parse(&p.display().to_string(), e.line(), e.to_string()))?
        }
        None => Scenario::preset(&args.scenario, args.seed)
            .map_err(|e| Error::Validation(format!("{e}; presets: {}", PRESETS.join(", "))))?,
    };
    if args.scenario_file.is_some() {
        scenario.seed = args.seed;
    }
    if let Some(n) = args.reports_per_quarter {
        scenario.reports_per_quarter = n;
    }
    if let Some(n) = args.quarters {
        scenario.n_quarters = n;
    }
    let out = required(&args.out, "out")?;
    let generated = generate(&scenario)?;
    generated.write_to(out)?;
    let m = &generated.manifest;
    let summary = serde_json::json!({
        "scenario": m.scenario,
        "seed": m.seed,
        "reports": m.reports_per_quarter.values().sum::<u64>(),
        "first_quarter": m.first_quarter,
        "last_quarter": m.last_quarter,
        "concepts": m.concept_count,
        "sibling_ssm": m.sibling_ssm,
        "cousin_ssm": m.cousin_ssm,
        "planted": m.planted.len(),
        "negatives": m.negatives.len(),
    });
    writeln!(stdout, "{summary}").map_err(|e| Error::io("<stdout>", e))
}

/// Column reference written next to every output set.
pub const OUTPUTS_README: &str = "\
# Output files

Empty cells mean the value is undefined (for example PPV with no alert).

## results_<METHOD>.csv (run)

One row per pair and cutoff.

| column | meaning |
|---|---|
| drug, event | pair codes |
| cutoff | last quarter included (cumulative) |
| a, b, c, d | 2x2 table: drug+event, drug only, event only, neither |
| oe | observed / expected, `a / ((a+b)(a+c)/N)` |
| pme, var | posterior mean and variance of the IC (log2) |
| ci_low, ci_high | 95% credibility interval |
| signal | `ci_low > threshold` |
| method | IC, IC_HLGT or IC_SSM |
| s_count | number of borrowed PTs (0: no borrowing) |
| tau2 | between-PT heterogeneity of the MAP prior |
| w, w_tilde | prior and posterior weight of the MAP component |
| map_mu, map_v | mean and variance of the MAP prior |

MAP prior weighting: each borrowed PT enters with weight `ssm / (vic + tau2)`
(`tau2 = 0` under `map_mode = \"FIXED\"`), giving
`map_mu = sum(w_i ic_i) / sum(w_i)` and `map_v = sum(ssm_i^2 / (vic_i + tau2)) / sum(w_i)^2`.
`tau2` is the REML estimate over the borrowed PTs only unless
`include_target_in_reml = true`. IC_HLGT uses `ssm = 1` for every PT in the
same HLGT.

## detections.csv (evaluate, compare)

`drug,pt,method,first_alert`: first cutoff with a signal, empty if none.

## metrics.csv (evaluate)

`scope,quarter,method,tp,fp,tn,fn,ignored,sensitivity,specificity,ppv,f1,youden`.
`overall` rows score all alerts up to the last quarter. `quarterly` rows
score alerts up to each quarter, over the positive controls whose label
update is still ahead. `ignored` counts positives first alerted at or after
their label quarter.

## compare.csv (compare)

`method_a,method_b,both,only_a,only_b,neither,same_quarter,imputed_quarter,mean_delta,mean_delta_observed`.
Counts of positive controls detected (alerted before labelling) by both,
one or neither method. Delta is `first_alert_b - first_alert_a` in
quarters; a missing detection is set to `imputed_quarter`, the quarter after
the last cutoff. `mean_delta_observed` uses pairs detected by both only.

## compare_delta.csv (compare)

`method_a,method_b,delta,observed,imputed`: histogram of delta, split into
pairs detected by both (observed) and by one method (imputed).

## bootstrap.json (compare)

Per comparison: `superiority[metric]` is the share of bootstrap replicates
of the reference set in which method_a scores higher than method_b. Ties and
undefined values are split by a seeded coin flip; `undefined` counts the
latter.

## sweep.csv (sweep)

`axis,value,method,tp,fp,tn,fn,ignored,sensitivity,specificity,ppv,f1,youden`.
One parameter varies per axis while the others stay at the reference
configuration; the `reference` row is the unmodified configuration.
`sweep_grid.toml` records the grid.

## effective_config.toml

All settings in force for the run, after defaults, config file and flags.
";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.analysis.w_policy = WeightPolicy::Fixed(0.8);
        c.reports = Some("r.tsv".into());
        c.first_quarter = Some("2016Q1".parse().unwrap());
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, "cfg").unwrap(), c);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = RunConfig::from_toml("min_ssm = 0.4\nbogus = 1\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let ok = RunConfig::from_toml("min_ssm = 0.4\nw_policy = 0.8\nmethods = [\"IC\"]\n", "cfg")
            .unwrap();
        assert_eq!(ok.analysis.min_ssm, 0.4);
        assert_eq!(ok.analysis.w_policy, WeightPolicy::Fixed(0.8));
        assert_eq!(ok.methods, vec![Method::Ic]);
        assert!(matches!(
            RunConfig::from_toml("min_ssm = [", "cfg"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn flags_override_config() {
        let mut c = RunConfig::from_toml("min_ssm = 0.4\nvague_sd = 3.0\n", "cfg").unwrap();
        let knobs = Knobs {
            min_ssm: Some(0.5),
            threshold: Some(1.0),
            ..Knobs::default()
        };
        knobs.apply(&mut c);
        assert_eq!(c.analysis.min_ssm, 0.5);
        assert_eq!(c.analysis.vague_sd, 3.0);
        assert_eq!(c.analysis.threshold, 1.0);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("e"))), 1);
        assert_eq!(exit_code(&Error::Cycle { path: vec![] }), 2);
        assert_eq!(exit_code(&Error::Validation("v".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("n".into())), 3);
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "icssm",
            "--threads",
            "2",
            "run",
            "--reports",
            "r.tsv",
            "--methods",
            "IC,IC_SSM",
            "--w",
            "MAX_SSM",
            "--threshold",
            "-0.5",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        let Command::Run(args) = cli.command else {
            panic!("expected run");
        };
        assert_eq!(args.knobs.methods, Some(vec![Method::Ic, Method::IcSsm]));
        assert_eq!(args.knobs.threshold, Some(-0.5));
        for cmd in [
            "validate", "run", "evaluate", "compare", "sweep", "generate",
        ] {
            assert!(Cli::try_parse_from(["icssm", cmd, "--help"]).is_err());
        }
    }
}
