//! Conjugate update of the two-component robust prior.

use serde::Serialize;
use statrs::function::erf::erfc;

use super::RobustPrior;
use crate::error::{Error, Result};

const CI_LOWER: f64 = 0.025;
const CI_UPPER: f64 = 0.975;
/// Target accuracy of the CDF at the returned interval bounds.
const CDF_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalComponent {
    pub mean: f64,
    pub var: f64,
}

impl NormalComponent {
    fn cdf(&self, x: f64) -> f64 {
        0.5 * erfc(-(x - self.mean) / (2.0 * self.var).sqrt())
    }

    /// Conjugate update with a normal likelihood `N(y; θ, vy)`.
    fn update(&self, y: f64, vy: f64) -> NormalComponent {
        let var = 1.0 / (1.0 / self.var + 1.0 / vy);
        NormalComponent {
            mean: var * (self.mean / self.var + y / vy),
            var,
        }
    }

    /// Log density of `y` under the prior predictive `N(mean, var + vy)`.
    fn ln_marginal(&self, y: f64, vy: f64) -> f64 {
        let s2 = self.var + vy;
        -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (y - self.mean).powi(2) / s2)
    }
}

/// Posterior mixture `w̃ · comp1 + (1 − w̃) · comp2` where `comp1` comes from
/// the MAP component and `comp2` from the vague one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixturePosterior {
    pub w_tilde: f64,
    pub comp1: NormalComponent,
    pub comp2: NormalComponent,
    pub pme: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl MixturePosterior {
    /// A plain posterior expressed as a degenerate mixture: both components
    /// carry the same moments and the interval is passed through unchanged.
    pub fn single(mean: f64, var: f64, ci_low: f64, ci_high: f64) -> Self {
        let c = NormalComponent { mean, var };
        MixturePosterior {
            w_tilde: 0.0,
            comp1: c,
            comp2: c,
            pme: mean,
            variance: var,
            ci_low,
            ci_high,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.w_tilde * self.comp1.cdf(x) + (1.0 - self.w_tilde) * self.comp2.cdf(x)
    }

    pub fn signal(&self, threshold: f64) -> bool {
        self.ci_low > threshold
    }
}

/// Updates the robust prior with the target's normal IC summary `(ic, vic)`.
pub fn mixture_posterior(prior: &RobustPrior, ic: f64, vic: f64) -> Result<MixturePosterior> {
    if !(vic > 0.0) || !vic.is_finite() || !ic.is_finite() {
        return Err(Error::Numerical(format!(
            "target IC summary ({ic}, {vic}) not usable"
        )));
    }
    let map = NormalComponent {
        mean: prior.map.mu,
        var: prior.map.v,
    };
    let vague = NormalComponent {
        mean: 0.0,
        var: prior.vague_sd * prior.vague_sd,
    };
    let w = prior.w.clamp(0.0, 1.0);
    let w_tilde = if w == 0.0 || w == 1.0 {
        w
    } else {
        let l1 = w.ln() + map.ln_marginal(ic, vic);
        let l2 = (1.0 - w).ln() + vague.ln_marginal(ic, vic);
        1.0 / (1.0 + (l2 - l1).exp())
    };
    let comp1 = map.update(ic, vic);
    let comp2 = vague.update(ic, vic);
    let pme = w_tilde * comp1.mean + (1.0 - w_tilde) * comp2.mean;
    let second = w_tilde * (comp1.var + comp1.mean * comp1.mean)
        + (1.0 - w_tilde) * (comp2.var + comp2.mean * comp2.mean);
    let variance = (second - pme * pme).max(0.0);

    let mut post = MixturePosterior {
        w_tilde,
        comp1,
        comp2,
        pme,
        variance,
        ci_low: f64::NAN,
        ci_high: f64::NAN,
    };
    post.ci_low = invert_cdf(&post, CI_LOWER);
    post.ci_high = invert_cdf(&post, CI_UPPER);
    Ok(post)
}

/// Bisection on the monotone mixture CDF.
fn invert_cdf(post: &MixturePosterior, p: f64) -> f64 {
    let comps = [post.comp1, post.comp2];
    let mut lo = comps
        .iter()
        .map(|c| c.mean - 12.0 * c.var.sqrt())
        .fold(f64::INFINITY, f64::min);
    let mut hi = comps
        .iter()
        .map(|c| c.mean + 12.0 * c.var.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = post.cdf(mid);
        if (f - p).abs() <= CDF_TOL || hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            return mid;
        }
        if f < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::borrow::{MapMode, MapPrior};

    fn prior(mu: f64, v: f64, vague_sd: f64, w: f64) -> RobustPrior {
        RobustPrior {
            map: MapPrior {
                mu,
                v,
                tau2: 0.0,
                s_count: 1,
                mode: MapMode::Fixed,
                converged: true,
            },
            vague_sd,
            w,
        }
    }

    #[test]
    fn full_weight_is_plain_conjugate_update() {
        let post = mixture_posterior(&prior(0.0, 0.3, 2.0, 1.0), 2.0, 0.3).unwrap();
        assert_eq!(post.w_tilde, 1.0);
        assert!((post.pme - 1.0).abs() < 1e-15);
        assert!((post.variance - 0.15).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_with_precise_data_follows_data() {
        let post = mixture_posterior(&prior(5.0, 0.1, 2.0, 0.0), 1.3, 1e-8).unwrap();
        assert_eq!(post.w_tilde, 0.0);
        assert!((post.pme - 1.3).abs() < 1e-7);
    }

    #[test]
    fn agreement_raises_posterior_weight() {
        let post = mixture_posterior(&prior(1.0, 0.25, 2.0, 0.5), 1.0, 0.25).unwrap();
        assert!(post.w_tilde > 0.5, "{post:?}");
        assert!(post.ci_low <= post.pme && post.pme <= post.ci_high);
    }

    #[test]
    fn interval_bounds_hit_target_probabilities() {
        for w in [0.0, 0.3, 0.96, 1.0] {
            let post = mixture_posterior(&prior(-1.0, 0.2, 2.0, w), 2.5, 0.4).unwrap();
            assert!((post.cdf(post.ci_low) - 0.025).abs() <= 1e-6);
            assert!((post.cdf(post.ci_high) - 0.975).abs() <= 1e-6);
        }
    }

    #[test]
    fn vague_limit_recovers_data() {
        let post = mixture_posterior(&prior(0.0, 1.0, 1e6, 0.0), 0.8, 0.3).unwrap();
        assert!((post.pme - 0.8).abs() < 1e-9);
        assert!((post.variance - 0.3).abs() < 1e-9);
    }

    #[test]
    fn bad_target_variance_errors() {
        assert!(mixture_posterior(&prior(0.0, 1.0, 2.0, 0.5), 0.8, 0.0).is_err());
    }
}
