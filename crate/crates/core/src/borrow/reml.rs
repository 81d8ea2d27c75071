//! Restricted maximum likelihood for the between-event variance τ².
//!
//! For summaries `(y_s, v_s)` with marginal variance `v_s + τ²` the REML
//! log-likelihood, up to a constant, is
//!
//! ```text
//! ℓ(τ²) = −½ Σ ln(v_s + τ²) − ½ ln Σ w_s − ½ Σ w_s (y_s − μ̂)²,
//! w_s = 1 / (v_s + τ²),  μ̂ = Σ w_s y_s / Σ w_s.
//! ```
//!
//! The maximizer is located on a log-spaced scan and refined with Brent's
//! method. When the best scan point is τ² = 0 and the score there is not
//! positive, the estimate is exactly zero.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemlOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RemlOptions {
    fn default() -> Self {
        RemlOptions {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemlFit {
    pub tau2: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn reml_objective(data: &[(f64, f64)], tau2: f64) -> f64 {
    let mut sum_w = 0.0;
    let mut sum_wy = 0.0;
    let mut sum_ln_var = 0.0;
    for &(y, v) in data {
        let var = v + tau2;
        sum_w += 1.0 / var;
        sum_wy += y / var;
        sum_ln_var += var.ln();
    }
    let mu = sum_wy / sum_w;
    let q: f64 = data
        .iter()
        .map(|&(y, v)| (y - mu).powi(2) / (v + tau2))
        .sum();
    -0.5 * (sum_ln_var + sum_w.ln() + q)
}

/// Derivative of [`reml_objective`] with respect to τ².
pub fn reml_score(data: &[(f64, f64)], tau2: f64) -> f64 {
    let ws: Vec<f64> = data.iter().map(|&(_, v)| 1.0 / (v + tau2)).collect();
    let sum_w: f64 = ws.iter().sum();
    let sum_w2: f64 = ws.iter().map(|w| w * w).sum();
    let mu = data.iter().zip(&ws).map(|(&(y, _), w)| w * y).sum::<f64>() / sum_w;
    let sum_w2r2: f64 = data
        .iter()
        .zip(&ws)
        .map(|(&(y, _), w)| w * w * (y - mu).powi(2))
        .sum();
    0.5 * (sum_w2r2 - sum_w + sum_w2 / sum_w)
}

const SCAN_POINTS: usize = 120;

pub fn reml_tau2(data: &[(f64, f64)], options: &RemlOptions) -> RemlFit {
    let zero = |iterations| RemlFit {
        tau2: 0.0,
        log_likelihood: if data.is_empty() {
            0.0
        } else {
            reml_objective(data, 0.0)
        },
        iterations,
        converged: true,
    };
    if data.len() < 2 {
        return zero(0);
    }
    let (lo_y, hi_y) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(y, _)| {
            (lo.min(y), hi.max(y))
        });
    if hi_y == lo_y {
        return zero(0);
    }
    let max_v = data.iter().map(|&(_, v)| v).fold(0.0, f64::max);
    let mut upper = (hi_y - lo_y).powi(2) + max_v;
    let mut iterations = 0;

    loop {
        // τ² = 0 followed by a geometric grid up to `upper`.
        let lowest = upper * 1e-10;
        let ratio = (upper / lowest).powf(1.0 / (SCAN_POINTS - 1) as f64);
        let mut grid = Vec::with_capacity(SCAN_POINTS + 1);
        grid.push(0.0);
        grid.extend((0..SCAN_POINTS).map(|i| lowest * ratio.powi(i as i32)));
        *grid.last_mut().unwrap() = upper;

        let values: Vec<f64> = grid.iter().map(|&t| reml_objective(data, t)).collect();
        let best = values
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > values[b] { i } else { b });

        if best == 0 && reml_score(data, 0.0) <= 0.0 {
            return zero(iterations);
        }
        if best == grid.len() - 1 {
            upper *= 10.0;
            iterations += 1;
            if iterations >= options.max_iter {
                return RemlFit {
                    tau2: upper,
                    log_likelihood: reml_objective(data, upper),
                    iterations,
                    converged: false,
                };
            }
            continue;
        }
        let a = grid[best.saturating_sub(1)];
        let b = grid[best + 1];
        let (tau2, used, converged) = brent_max(
            |t| reml_objective(data, t),
            a,
            b,
            options.tol,
            options.max_iter.saturating_sub(iterations),
        );
        let tau2 = tau2.max(0.0);
        return RemlFit {
            tau2,
            log_likelihood: reml_objective(data, tau2),
            iterations: iterations + used,
            converged,
        };
    }
}

/// Brent's golden-section / parabolic search for a maximum on `[a, b]`.
/// Returns `(argmax, iterations, converged)`.
fn brent_max<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, usize, bool) {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let g = |x: f64| -f(x);
    let (mut a, mut b) = (a, b);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);

    for iter in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + tol * 1e-3;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return (x, iter, true);
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = g(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, max_iter, false)
}
