//! Dynamic borrowing through a robust meta-analytic predictive (MAP) prior.
//!
//! IC summaries of related events are pooled into a normal MAP prior. Each
//! source is weighted by `ssm / (vic + τ²)`, so similarity scales the usual
//! inverse-variance weight. The MAP prior is then mixed with a vague
//! `N(0, σ²)` component and updated with the target's normal IC summary. Both
//! components are conjugate, so the posterior is again a two-component
//! normal mixture.

mod mixture;
mod reml;

pub use mixture::{mixture_posterior, MixturePosterior, NormalComponent};
pub use reml::{reml_objective, reml_score, reml_tau2, RemlFit, RemlOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VAGUE_SD: f64 = 2.0;

/// IC summary of one related event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BorrowSource {
    pub pt: String,
    pub ic: f64,
    pub vic: f64,
    pub ssm: f64,
}

impl BorrowSource {
    pub fn new(pt: impl Into<String>, ic: f64, vic: f64, ssm: f64) -> Result<Self> {
        let pt = pt.into();
        if !(vic > 0.0) || !vic.is_finite() || !ic.is_finite() {
            return Err(Error::Numerical(format!(
                "source {pt}: IC summary ({ic}, {vic}) not usable"
            )));
        }
        if !(ssm > 0.0 && ssm <= 1.0) {
            return Err(Error::Validation(format!(
                "source {pt}: similarity {ssm} outside (0, 1]"
            )));
        }
        Ok(BorrowSource { pt, ic, vic, ssm })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MapMode {
    Fixed,
    Random,
}

impl std::str::FromStr for MapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FIXED" => Ok(MapMode::Fixed),
            "RANDOM" => Ok(MapMode::Random),
            other => Err(Error::Validation(format!(
                "unknown MAP mode `{other}` (expected FIXED or RANDOM)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPrior {
    pub mu: f64,
    pub v: f64,
    pub tau2: f64,
    pub s_count: usize,
    pub mode: MapMode,
    /// False when REML did not converge and the fixed-effect fit was used.
    pub converged: bool,
}

/// How the prior weight `w` of the MAP component is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightPolicy {
    /// `w = max(ssm)` over the sources.
    MaxSsm,
    Fixed(f64),
}

impl WeightPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "MAX_SSM" | "max_ssm" => Ok(WeightPolicy::MaxSsm),
            other => {
                let w: f64 = other
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad weight policy `{other}`")))?;
                if (0.0..=1.0).contains(&w) {
                    Ok(WeightPolicy::Fixed(w))
                } else {
                    Err(Error::Validation(format!(
                        "fixed weight {w} outside [0, 1]"
                    )))
                }
            }
        }
    }
}

impl std::str::FromStr for WeightPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightPolicy::parse(s)
    }
}

impl std::fmt::Display for WeightPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightPolicy::MaxSsm => f.write_str("MAX_SSM"),
            WeightPolicy::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl Serialize for WeightPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(w) => WeightPolicy::parse(&w.to_string()),
            Raw::Text(s) => WeightPolicy::parse(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustPrior {
    pub map: MapPrior,
    pub vague_sd: f64,
    pub w: f64,
}

/// Similarity-weighted pooled mean and variance with per-source variance
/// `vic + tau2`.
fn pooled(sources: &[BorrowSource], tau2: f64) -> (f64, f64) {
    let mut sum_w = 0.0;
    let mut sum_wy = 0.0;
    let mut sum_s2 = 0.0;
    for s in sources {
        let var = s.vic + tau2;
        let w = s.ssm / var;
        sum_w += w;
        sum_wy += w * s.ic;
        sum_s2 += s.ssm * s.ssm / var;
    }
    (sum_wy / sum_w, sum_s2 / (sum_w * sum_w))
}

/// Fixed-effect MAP prior:
/// `μ = Σ(ssm/vic · ic) / Σ(ssm/vic)`, `V = Σ(ssm²/vic) / (Σ ssm/vic)²`.
pub fn fixed_effect_map(sources: &[BorrowSource]) -> Result<MapPrior> {
    if sources.is_empty() {
        return Err(Error::Validation(
            "MAP prior needs at least one source".into(),
        ));
    }
    let (mu, v) = pooled(sources, 0.0);
    Ok(MapPrior {
        mu,
        v,
        tau2: 0.0,
        s_count: sources.len(),
        mode: MapMode::Fixed,
        converged: true,
    })
}

/// Random-effects MAP prior. τ² is the REML estimate from the sources (plus
/// `extra` summaries, e.g. the target itself, when given); similarity then
/// enters the weights as `ssm / (vic + τ²)`.
pub fn random_effects_map(
    sources: &[BorrowSource],
    extra: &[(f64, f64)],
    options: &RemlOptions,
) -> Result<MapPrior> {
    if sources.is_empty() {
        return Err(Error::Validation(
            "MAP prior needs at least one source".into(),
        ));
    }
    let mut data: Vec<(f64, f64)> = sources.iter().map(|s| (s.ic, s.vic)).collect();
    data.extend_from_slice(extra);
    let fit = reml_tau2(&data, options);
    if !fit.converged {
        log::warn!(
            "REML did not converge after {} iterations; using the fixed-effect MAP prior",
            options.max_iter
        );
        let mut map = fixed_effect_map(sources)?;
        map.converged = false;
        return Ok(map);
    }
    let (mu, v) = pooled(sources, fit.tau2);
    Ok(MapPrior {
        mu,
        v,
        tau2: fit.tau2,
        s_count: sources.len(),
        mode: MapMode::Random,
        converged: true,
    })
}

/// Mixes the MAP prior with a vague `N(0, vague_sd²)` component.
pub fn robustify(
    map: MapPrior,
    sources: &[BorrowSource],
    vague_sd: f64,
    policy: WeightPolicy,
) -> Result<RobustPrior> {
    if !(vague_sd > 0.0) {
        return Err(Error::Validation(format!(
            "vague_sd must be > 0, got {vague_sd}"
        )));
    }
    if !(map.v > 0.0) {
        return Err(Error::Numerical(format!(
            "MAP variance {} not positive",
            map.v
        )));
    }
    let w = match policy {
        WeightPolicy::MaxSsm => sources.iter().map(|s| s.ssm).fold(0.0, f64::max),
        WeightPolicy::Fixed(w) => w,
    };
    Ok(RobustPrior { map, vague_sd, w })
}
