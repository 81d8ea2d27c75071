//! Bootstrap superiority of one method over another on a fixed reference set.
//!
//! Run with `cargo run --example bootstrap_comparison`.

use icssm::eval::{
    bootstrap, bootstrap_json, DetectionRecord, ReferenceEntry, ReferenceSet, ScoreOptions,
};
use icssm::{Method, QuarterIndex};

fn main() -> icssm::Result<()> {
    let q = |s: &str| -> QuarterIndex { s.parse().unwrap() };
    let mut entries = Vec::new();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let record = |method, pt: &str, first: Option<QuarterIndex>| DetectionRecord {
        drug: "D1".into(),
        pt: pt.into(),
        method,
        first_alert: first,
    };
    for i in 0..30 {
        let pt = format!("POS{i:02}");
        entries.push(ReferenceEntry::positive("D1", &pt, q("2019Q1")));
        // Method A detects 24 of 30 positives early, method B only 15.
        a.push(record(Method::IcSsm, &pt, (i < 24).then(|| q("2017Q2"))));
        b.push(record(Method::Ic, &pt, (i < 15).then(|| q("2018Q1"))));
    }
    for i in 0..30 {
        let pt = format!("NEG{i:02}");
        entries.push(ReferenceEntry::negative("D1", &pt));
        a.push(record(Method::IcSsm, &pt, (i < 4).then(|| q("2018Q3"))));
        b.push(record(Method::Ic, &pt, (i < 2).then(|| q("2018Q3"))));
    }
    let reference = ReferenceSet::from_entries(entries)?;
    let result = bootstrap(
        &a,
        &b,
        &reference,
        q("2019Q4"),
        &ScoreOptions::default(),
        1000,
        42,
    )?;
    println!("{}", bootstrap_json(&[result]));
    Ok(())
}
