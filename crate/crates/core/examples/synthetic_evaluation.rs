//! Generates a synthetic scenario with a planted concordant cluster and
//! scores the three methods against its reference set.
//!
//! Run with `cargo run --release --example synthetic_evaluation [preset] [seed]`.

use icssm::eval::{
    compare_methods, quarterly_curves, records_for, run_quarters, score, ScoreOptions,
};
use icssm::ontology::{build_similarity_matrix, IntrinsicIc, OntologyGraph};
use icssm::synth::{generate, Scenario};
use icssm::{AnalysisConfig, Method, QuarterIndex, SignalAnalysis};

fn main() -> icssm::Result<()> {
    let preset = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "concordant_cluster".into());
    let seed = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);

    let scenario = Scenario::preset(&preset, seed)?;
    let data = generate(&scenario)?;
    let store = data.store()?;
    let reference = data.reference_set()?;
    let graph = OntologyGraph::parse(&data.ontology, "synthetic")?;
    let ic = IntrinsicIc::compute(&graph)?;
    let sim = build_similarity_matrix(&graph, &ic, &graph.preferred_terms(), 0.3)?;

    let config = AnalysisConfig {
        n_samples: 2000,
        ..AnalysisConfig::default()
    };
    let analysis = SignalAnalysis::new(&store, config)?
        .with_similarity(&sim)
        .with_hierarchy(&graph);

    let end = scenario.last_quarter();
    let quarters = QuarterIndex::range_inclusive(scenario.first_quarter.offset(4), end);
    let (_, records) = run_quarters(&analysis, &Method::ALL, &quarters, &reference)?;
    let options = ScoreOptions::default();

    println!(
        "{preset} seed {seed}: {} positives, {} negatives",
        reference.positives().count(),
        reference.negatives().count()
    );
    for m in Method::ALL {
        let r = score(&records_for(&records, m), &reference, end, &options);
        println!(
            "{m:<8} tp={} fp={} tn={} fn={} ignored={} Se={:?} Sp={:?}",
            r.tp, r.fp, r.tn, r.fn_, r.ignored, r.sensitivity, r.specificity
        );
    }

    println!("\nquarterly sensitivity of IC_SSM:");
    for (q, r) in quarterly_curves(
        &records_for(&records, Method::IcSsm),
        &reference,
        &quarters,
        &options,
    ) {
        println!("  {q}: {:?}", r.sensitivity);
    }

    let c = compare_methods(
        &records_for(&records, Method::IcSsm),
        &records_for(&records, Method::Ic),
        &reference,
        end,
        &options,
    );
    println!(
        "\nIC_SSM vs IC: both={} only IC_SSM={} only IC={} neither={} mean delay of IC={:?}",
        c.both, c.only_a, c.only_b, c.neither, c.mean_delta
    );
    Ok(())
}
