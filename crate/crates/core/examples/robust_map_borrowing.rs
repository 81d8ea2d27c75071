//! Borrowing strength from similar terms through a robust MAP prior.
//!
//! Run with `cargo run --example robust_map_borrowing`.

use icssm::borrow::{
    fixed_effect_map, mixture_posterior, random_effects_map, robustify, BorrowSource, RemlOptions,
    WeightPolicy, DEFAULT_VAGUE_SD,
};

fn main() -> icssm::Result<()> {
    // Target: weak evidence of a raised IC.
    let (ic, vic) = (0.4, 0.30);
    let neighbours = [
        BorrowSource::new("PT_A", 1.1, 0.05, 0.62)?,
        BorrowSource::new("PT_B", 0.9, 0.08, 0.45)?,
        BorrowSource::new("PT_C", 1.4, 0.20, 0.35)?,
    ];

    let fixed = fixed_effect_map(&neighbours)?;
    let random = random_effects_map(&neighbours, &[], &RemlOptions::default())?;
    println!("fixed  MAP: mu={:.3} V={:.4}", fixed.mu, fixed.v);
    println!(
        "random MAP: mu={:.3} V={:.4} tau2={:.4}",
        random.mu, random.v, random.tau2
    );

    for policy in [
        WeightPolicy::MaxSsm,
        WeightPolicy::Fixed(0.9),
        WeightPolicy::Fixed(0.0),
    ] {
        let prior = robustify(random, &neighbours, DEFAULT_VAGUE_SD, policy)?;
        let post = mixture_posterior(&prior, ic, vic)?;
        println!(
            "w={:.2}: w~={:.3} mean={:.3} CI [{:.3}, {:.3}] signal={}",
            prior.w,
            post.w_tilde,
            post.pme,
            post.ci_low,
            post.ci_high,
            post.signal(0.0)
        );
    }

    // A conflicting target: the vague component takes over.
    let prior = robustify(random, &neighbours, DEFAULT_VAGUE_SD, WeightPolicy::MaxSsm)?;
    let post = mixture_posterior(&prior, -2.5, 0.05)?;
    println!("conflict: w~={:.4} mean={:.3}", post.w_tilde, post.pme);
    Ok(())
}
