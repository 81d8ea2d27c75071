//! Intrinsic information content and Sokal similarity on a small hierarchy.
//!
//! Run with `cargo run --example ontology_similarity`.

use icssm::ontology::{build_similarity_matrix, IntrinsicIc, OntologyGraph};

const ONTOLOGY: &str = "\
N\tROOT\tOTHER\troot
N\tSOC1\tSOC\tcardiac disorders
N\tG1\tHLGT\tarrhythmias
N\tT1\tHLT\tsupraventricular arrhythmias
N\tT2\tHLT\tventricular arrhythmias
N\tP1\tPT\tatrial fibrillation
N\tP2\tPT\tatrial flutter
N\tP3\tPT\tventricular tachycardia
N\tP4\tPT\tventricular fibrillation
N\tP5\tPT\ttorsade de pointes
E\tSOC1\tROOT\tISA
E\tG1\tSOC1\tISA
E\tT1\tG1\tISA
E\tT2\tG1\tISA
E\tP1\tT1\tISA
E\tP2\tT1\tISA
E\tP3\tT2\tISA
E\tP4\tT2\tISA
E\tP5\tT2\tISA
E\tG1\tSOC1\tMEDDRA
E\tT1\tG1\tMEDDRA
E\tT2\tG1\tMEDDRA
E\tP1\tT1\tMEDDRA
E\tP2\tT1\tMEDDRA
E\tP3\tT2\tMEDDRA
E\tP4\tT2\tMEDDRA
E\tP5\tT2\tMEDDRA
";

fn main() -> icssm::Result<()> {
    let graph = OntologyGraph::parse(ONTOLOGY, "inline")?;
    let ic = IntrinsicIc::compute(&graph)?;

    println!("concept  IC");
    for c in graph.concepts() {
        println!("{:<8} {:.3}", c.code, ic.of(&graph, &c.code).unwrap());
    }

    println!();
    for (a, b) in [("P1", "P2"), ("P3", "P4"), ("P1", "P3"), ("P1", "P1")] {
        println!("ssm({a}, {b}) = {:.3}", graph.sokal(&ic, a, b)?);
    }

    let pts = graph.preferred_terms();
    let sim = build_similarity_matrix(&graph, &ic, &pts, 0.1)?;
    println!("\n{} PT pairs above minSSM 0.1:", sim.pair_count());
    print!("{}", sim.to_csv());
    println!("HLT neighbours of P3: {:?}", graph.hlt_neighbors("P3")?);
    Ok(())
}
