//! Information Component posterior for a single 2×2 table.
//!
//! Cell probabilities get a Dirichlet prior whose shape is the product of the
//! table margins, so the posterior IC is pulled from `log2(O/E)` towards zero.
//! The posterior `Dirichlet(α + counts)` is sampled by Monte Carlo and each
//! draw is mapped to `log2(p_a / ((p_a + p_b)(p_a + p_c)))`.
//!
//! Draws are generated as independent Gamma variates in log space, which keeps
//! every draw finite even when a posterior shape is far below 1 (a zero cell
//! with a tiny prior mass would otherwise underflow to `p_a = 0`).
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded per pair from a
//! SHA-256 digest of `(seed, drug, event, cutoff)`; see [`pair_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, OpenClosed01};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quarter::QuarterIndex;
use crate::reports::ContingencyTable;

pub const DEFAULT_PRIOR_STRENGTH: f64 = 2.0;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const MIN_SAMPLES: usize = 1_000;
/// Recorded in run metadata so results can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng(rand_chacha 0.9); per-pair seed = SHA-256(seed|drug|event|cutoff)[0..8] LE";

const CI_LOWER: f64 = 0.025;
const CI_UPPER: f64 = 0.975;
const MAX_REDRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirichletPrior {
    /// Shapes for cells a, b, c, d.
    pub alpha: [f64; 4],
}

impl DirichletPrior {
    pub fn new(alpha: [f64; 4]) -> Result<Self> {
        if alpha.iter().all(|a| a.is_finite() && *a > 0.0) {
            Ok(DirichletPrior { alpha })
        } else {
            Err(Error::Validation(format!(
                "Dirichlet shapes must be positive, got {alpha:?}"
            )))
        }
    }

    /// Marginal-product prior of total strength `nu`. Margin proportions are
    /// kept inside `[1/(N+2), 1 - 1/(N+2)]` so every shape stays positive.
    pub fn marginal_product(t: &ContingencyTable, nu: f64) -> Result<Self> {
        let n = t.total();
        if n == 0 {
            return Err(Error::Validation("empty contingency table".into()));
        }
        if !(nu > 0.0) {
            return Err(Error::Validation(format!(
                "prior strength must be > 0, got {nu}"
            )));
        }
        let floor = 1.0 / (n as f64 + 2.0);
        let bound = |x: f64| x.clamp(floor, 1.0 - floor);
        let qx = bound(t.drug_margin() as f64 / n as f64);
        let qy = bound(t.event_margin() as f64 / n as f64);
        Self::new([
            nu * qx * qy,
            nu * qx * (1.0 - qy),
            nu * (1.0 - qx) * qy,
            nu * (1.0 - qx) * (1.0 - qy),
        ])
    }

    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Posterior shapes `α_i + count_i`.
    pub fn posterior(&self, t: &ContingencyTable) -> [f64; 4] {
        let counts = [t.a, t.b, t.c, t.d];
        std::array::from_fn(|i| self.alpha[i] + counts[i] as f64)
    }
}

/// Marginal-product prior with strength 2.
pub fn default_prior(t: &ContingencyTable) -> Result<DirichletPrior> {
    DirichletPrior::marginal_product(t, DEFAULT_PRIOR_STRENGTH)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcPosterior {
    /// Posterior mean of the IC, log2 units.
    pub pme: f64,
    pub variance: f64,
    /// 95% equal-tailed interval from empirical percentiles.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Draws that came out non-finite and were redrawn.
    pub redrawn: usize,
}

impl IcPosterior {
    pub fn signal(&self, threshold: f64) -> bool {
        signal_flag(self, threshold)
    }
}

/// One Gamma(shape, 1) variate, returned as its natural log.
struct LnGamma {
    gamma: Gamma<f64>,
    /// `Some(1/shape)` when sampling through `Gamma(shape+1) · U^(1/shape)`.
    boost: Option<f64>,
}

impl LnGamma {
    fn new(shape: f64) -> Result<Self> {
        let (s, boost) = if shape < 1.0 {
            (shape + 1.0, Some(1.0 / shape))
        } else {
            (shape, None)
        };
        let gamma = Gamma::new(s, 1.0)
            .map_err(|e| Error::Numerical(format!("gamma shape {shape}: {e}")))?;
        Ok(LnGamma { gamma, boost })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = self.gamma.sample(rng).ln();
        match self.boost {
            Some(inv_shape) => {
                let u: f64 = OpenClosed01.sample(rng);
                g + u.ln() * inv_shape
            }
            None => g,
        }
    }
}

fn ln_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Monte Carlo posterior of the IC. Deterministic given `seed`.
pub fn posterior_ic(
    t: &ContingencyTable,
    prior: &DirichletPrior,
    n_samples: usize,
    seed: u64,
) -> Result<IcPosterior> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::Validation(format!(
            "n_samples must be at least {MIN_SAMPLES}, got {n_samples}"
        )));
    }
    let shapes = prior.posterior(t);
    let samplers = shapes
        .iter()
        .map(|&s| LnGamma::new(s))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_samples);
    let mut redrawn = 0usize;
    let ln2 = std::f64::consts::LN_2;

    while draws.len() < n_samples {
        let mut attempts = 0;
        let ic = loop {
            let [ga, gb, gc, gd] = [
                samplers[0].sample(&mut rng),
                samplers[1].sample(&mut rng),
                samplers[2].sample(&mut rng),
                samplers[3].sample(&mut rng),
            ];
            let total = ln_add(ln_add(ga, gb), ln_add(gc, gd));
            let ic = (ga - ln_add(ga, gb) - ln_add(ga, gc) + total) / ln2;
            if ic.is_finite() {
                break ic;
            }
            redrawn += 1;
            attempts += 1;
            if attempts >= MAX_REDRAWS {
                return Err(Error::Numerical(format!(
                    "{MAX_REDRAWS} consecutive non-finite IC draws for shapes {shapes:?}"
                )));
            }
        };
        draws.push(ic);
    }

    let n = draws.len() as f64;
    let pme = draws.iter().sum::<f64>() / n;
    let variance = draws.iter().map(|x| (x - pme).powi(2)).sum::<f64>() / (n - 1.0);
    let ci_low = quantile_in_place(&mut draws, CI_LOWER);
    let ci_high = quantile_in_place(&mut draws, CI_UPPER);
    Ok(IcPosterior {
        pme,
        variance,
        ci_low,
        ci_high,
        n_samples,
        seed,
        redrawn,
    })
}

/// Linear-interpolation quantile (Hyndman–Fan type 7). Reorders `xs`.
fn quantile_in_place(xs: &mut [f64], p: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut x_lo, rest) = xs.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return x_lo;
    }
    let x_hi = rest.iter().copied().fold(f64::INFINITY, f64::min);
    x_lo + frac * (x_hi - x_lo)
}

/// Signal when the lower credibility bound exceeds `threshold`.
pub fn signal_flag(p: &IcPosterior, threshold: f64) -> bool {
    p.ci_low > threshold
}

/// `(mean, variance)` of the posterior for use as a normal likelihood.
pub fn normal_approx(p: &IcPosterior) -> Result<(f64, f64)> {
    if p.variance > 0.0 && p.variance.is_finite() && p.pme.is_finite() {
        Ok((p.pme, p.variance))
    } else {
        Err(Error::Numerical(format!(
            "degenerate IC posterior (pme {}, variance {})",
            p.pme, p.variance
        )))
    }
}

/// Per-pair seed so that results do not depend on evaluation order.
pub fn pair_seed(seed: u64, drug: &str, event: &str, cutoff: QuarterIndex) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(drug.as_bytes())
        .chain_update([0u8])
        .chain_update(event.as_bytes())
        .chain_update([0u8])
        .chain_update(cutoff.to_string().as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::digamma;

    /// Closed-form posterior mean: E[ln p_a] − E[ln(p_a+p_b)] − E[ln(p_a+p_c)]
    /// from Dirichlet and Beta marginals.
    fn exact_pme(t: &ContingencyTable) -> f64 {
        let g = default_prior(t).unwrap().posterior(t);
        let total: f64 = g.iter().sum();
        (digamma(g[0]) - digamma(g[0] + g[1]) - digamma(g[0] + g[2]) + digamma(total))
            / std::f64::consts::LN_2
    }

    #[test]
    fn default_prior_examples() {
        let p = default_prior(&ContingencyTable::new(25, 25, 25, 25)).unwrap();
        for a in p.alpha {
            assert!((a - 0.5).abs() < 1e-15);
        }
        let p = default_prior(&ContingencyTable::new(10, 90, 90, 810)).unwrap();
        assert!((p.alpha[0] - 0.02).abs() < 1e-15);
        assert!((p.strength() - 2.0).abs() < 1e-12);

        let p = default_prior(&ContingencyTable::new(0, 0, 3, 7)).unwrap();
        assert!(p.alpha.iter().all(|a| *a > 0.0));
        assert!(default_prior(&ContingencyTable::new(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn independence_table_centers_on_zero() {
        let t = ContingencyTable::new(10_000, 10_000, 10_000, 10_000);
        let p = posterior_ic(&t, &default_prior(&t).unwrap(), DEFAULT_SAMPLES, 7).unwrap();
        assert!(p.pme.abs() < 0.02, "{p:?}");
        assert!(p.ci_low < 0.0 && p.ci_high > 0.0);
    }

    #[test]
    fn strong_association_close_to_log_oe() {
        let t = ContingencyTable::new(100, 300, 150, 9_450);
        let oe = t.observed_expected().unwrap();
        assert!((oe - 10.0).abs() < 1e-12);
        let p = posterior_ic(&t, &default_prior(&t).unwrap(), DEFAULT_SAMPLES, 11).unwrap();
        assert!((p.pme - oe.log2()).abs() < 0.1, "{p:?}");
        assert!((p.pme - exact_pme(&t)).abs() < 4.0 * (p.variance / p.n_samples as f64).sqrt());
        assert!(p.ci_low <= p.pme && p.pme <= p.ci_high);
    }

    #[test]
    fn zero_cell_stays_finite() {
        let t = ContingencyTable::new(0, 100, 100, 9_800);
        let p = posterior_ic(&t, &default_prior(&t).unwrap(), 10_000, 3).unwrap();
        assert!(p.pme.is_finite() && p.pme < 0.0);
        assert!(p.ci_low.is_finite());
        assert_eq!(p.redrawn, 0);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let t = ContingencyTable::new(7, 40, 60, 3_000);
        let prior = default_prior(&t).unwrap();
        let a = posterior_ic(&t, &prior, 5_000, 99).unwrap();
        let b = posterior_ic(&t, &prior, 5_000, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pme.to_bits(), b.pme.to_bits());
        let c = posterior_ic(&t, &prior, 5_000, 100).unwrap();
        assert_ne!(a.pme, c.pme);
    }

    #[test]
    fn sample_count_is_validated() {
        let t = ContingencyTable::new(1, 1, 1, 1);
        assert!(posterior_ic(&t, &default_prior(&t).unwrap(), 999, 0).is_err());
    }

    #[test]
    fn signal_flag_thresholds() {
        let mut p = IcPosterior {
            pme: 0.8,
            variance: 0.1,
            ci_low: 0.1,
            ci_high: 1.5,
            n_samples: 1_000,
            seed: 0,
            redrawn: 0,
        };
        assert!(signal_flag(&p, 0.0));
        assert!(!signal_flag(&p, 1.0));
        p.ci_low = -0.3;
        assert!(!signal_flag(&p, 0.0));
    }

    #[test]
    fn normal_approx_passes_through() {
        for t in [
            ContingencyTable::new(10_000, 10_000, 10_000, 10_000),
            ContingencyTable::new(100, 300, 150, 9_450),
            ContingencyTable::new(0, 100, 100, 9_800),
        ] {
            let p = posterior_ic(&t, &default_prior(&t).unwrap(), 2_000, 5).unwrap();
            assert_eq!(normal_approx(&p).unwrap(), (p.pme, p.variance));
        }
        let degenerate = IcPosterior {
            pme: 0.0,
            variance: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            n_samples: 1_000,
            seed: 0,
            redrawn: 0,
        };
        assert!(normal_approx(&degenerate).is_err());
    }

    #[test]
    fn larger_tables_concentrate() {
        let base = ContingencyTable::new(6, 30, 40, 900);
        let log_oe = base.observed_expected().unwrap().log2();
        let mut prev_gap = f64::INFINITY;
        let mut prev_width = f64::INFINITY;
        for k in [1, 10, 100] {
            let t = base.scaled(k);
            let p = posterior_ic(&t, &default_prior(&t).unwrap(), 20_000, k).unwrap();
            let gap = (p.pme - log_oe).abs();
            let width = p.ci_high - p.ci_low;
            assert!(gap < prev_gap && width < prev_width, "k={k}: {p:?}");
            prev_gap = gap;
            prev_width = width;
        }
        assert!(prev_gap < 0.02);
    }

    #[test]
    fn quantile_matches_sorted_interpolation() {
        let mut xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 101) as f64).collect();
        assert_eq!(quantile_in_place(&mut xs, 0.025), 2.5);
        assert_eq!(quantile_in_place(&mut xs, 0.975), 97.5);
        let mut ys = vec![3.0, 1.0, 2.0];
        assert_eq!(quantile_in_place(&mut ys, 0.5), 2.0);
    }

    #[test]
    fn pair_seeds_differ_by_component() {
        let q: QuarterIndex = "2016Q1".parse().unwrap();
        let s = pair_seed(1, "D", "E", q);
        assert_eq!(s, pair_seed(1, "D", "E", q));
        assert_ne!(s, pair_seed(2, "D", "E", q));
        assert_ne!(s, pair_seed(1, "DE", "", q));
        assert_ne!(s, pair_seed(1, "D", "E", q.next()));
    }
}
