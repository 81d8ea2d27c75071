//! Cumulative 2x2 tables from a spontaneous report file.
//!
//! Run with `cargo run --example contingency_tables`.

use icssm::reports::{LoadOptions, ReportStore};

const REPORTS: &str = "\
R1\t2015Q1\tDRUGA\tNAUSEA;HEADACHE
R2\t2015Q1\tDRUGB\tNAUSEA
R3\t2015Q2\tDRUGA;DRUGB\tRASH
R4\t2015Q2\tDRUGA\tNAUSEA
R5\t2015Q3\tDRUGC\tHEADACHE
R6\t2015Q3\tDRUGA\tNAUSEA;RASH
";

fn main() -> icssm::Result<()> {
    let store = ReportStore::parse(REPORTS, "inline", &LoadOptions::default())?;
    println!(
        "{}",
        serde_json::to_string_pretty(&store.summary()).unwrap()
    );

    let (first, last) = (
        store.first_quarter().unwrap(),
        store.last_quarter().unwrap(),
    );
    for q in icssm::QuarterIndex::range_inclusive(first, last) {
        let t = store.contingency("DRUGA", "NAUSEA", q);
        println!(
            "{q}: a={} b={} c={} d={}  O/E={}",
            t.a,
            t.b,
            t.c,
            t.d,
            t.observed_expected()
                .map_or("undefined".to_string(), |x| format!("{x:.3}"))
        );
    }
    println!("active pairs at {last}: {:?}", store.active_pairs(last, 1));
    Ok(())
}
