//! One-at-a-time sensitivity of IC_SSM to minSSM, w, the vague SD and the
//! signal threshold on a synthetic scenario.
//!
//! Run with `cargo run --release --example parameter_sweep`.

use icssm::analysis::PosteriorMemo;
use icssm::borrow::WeightPolicy;
use icssm::eval::{parameter_sweep, ScoreOptions, SweepGrid};
use icssm::ontology::{build_similarity_matrix, IntrinsicIc, OntologyGraph};
use icssm::synth::{generate, Scenario};
use icssm::{AnalysisConfig, Method, QuarterIndex, SignalAnalysis};

fn main() -> icssm::Result<()> {
    let scenario = Scenario::preset("dominated_method", 11)?;
    let data = generate(&scenario)?;
    let store = data.store()?;
    let reference = data.reference_set()?;
    let graph = OntologyGraph::parse(&data.ontology, "synthetic")?;
    let ic = IntrinsicIc::compute(&graph)?;

    let config = AnalysisConfig {
        n_samples: 2000,
        ..AnalysisConfig::default()
    };
    let grid = SweepGrid {
        min_ssm: vec![0.1, 0.3, 0.5],
        w: vec![WeightPolicy::Fixed(0.7), WeightPolicy::MaxSsm],
        vague_sd: vec![1.0, 5.0],
        threshold: vec![-0.5, 0.5],
    };
    let sim = build_similarity_matrix(
        &graph,
        &ic,
        &graph.preferred_terms(),
        grid.lowest_min_ssm(&config),
    )?;
    // Plain IC posteriors are shared across grid points.
    let memo = PosteriorMemo::new();
    let analysis = SignalAnalysis::new(&store, config)?
        .with_similarity(&sim)
        .with_memo(&memo)?;

    let end = scenario.last_quarter();
    let quarters = QuarterIndex::range_inclusive(scenario.first_quarter.offset(4), end);
    let rows = parameter_sweep(
        &analysis,
        &[Method::IcSsm],
        &quarters,
        &reference,
        &grid,
        end,
        &ScoreOptions::default(),
    )?;
    println!(
        "{:<10} {:<10} {:>6} {:>6} {:>6}",
        "axis", "value", "Se", "Sp", "F1"
    );
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    for r in rows {
        println!(
            "{:<10} {:<10} {:>6} {:>6} {:>6}",
            r.axis,
            r.value,
            fmt(r.metrics.sensitivity),
            fmt(r.metrics.specificity),
            fmt(r.metrics.f1)
        );
    }
    println!("memoised posteriors: {}", memo.len());
    Ok(())
}
