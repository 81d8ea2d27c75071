//! Monte Carlo posterior of the information component for one table.
//!
//! Run with `cargo run --release --example information_component`.

use icssm::ic::{default_prior, pair_seed, posterior_ic, DEFAULT_SAMPLES};
use icssm::reports::ContingencyTable;

fn main() -> icssm::Result<()> {
    let cutoff = "2019Q4".parse().unwrap();
    for t in [
        ContingencyTable::new(100, 300, 150, 9450),
        ContingencyTable::new(3, 997, 40, 58960),
        ContingencyTable::new(1, 20, 2, 50),
    ] {
        let prior = default_prior(&t)?;
        let seed = pair_seed(1, "DRUG", "EVENT", cutoff);
        let p = posterior_ic(&t, &prior, DEFAULT_SAMPLES, seed)?;
        let raw = t.observed_expected().unwrap().log2();
        println!(
            "a={:<4} raw log2(O/E)={raw:6.3}  IC={:6.3}  95% CI [{:6.3}, {:6.3}]  signal={}",
            t.a,
            p.pme,
            p.ci_low,
            p.ci_high,
            p.signal(0.0)
        );
    }
    Ok(())
}
