//! Adverse-event signal detection on spontaneous-report data.
//!
//! The crate computes the Bayesian Information Component (IC) for
//! product–event pairs and strengthens it with dynamic borrowing from
//! related events, either weighted by ontology-based semantic similarity
//! (`IC_SSM`) or with equal weights inside a MedDRA HLGT group (`IC_HLGT`).
//! An evaluation harness scores all methods against time-stamped
//! reference sets, quarter by quarter.
//!
//! Module map:
//!
//! - [`ontology`]: term DAG, intrinsic IC, Sokal similarity, MedDRA groupings
//! - [`reports`]: case report store and 2×2 contingency tables
//! - [`ic`]: Dirichlet–multinomial IC posterior by Monte Carlo
//! - [`borrow`]: MAP priors (fixed and random effects), robust mixture posteriors
//! - [`analysis`]: the per-pair pipelines for the three methods, batched over quarters
//! - [`eval`]: reference sets, metrics, comparisons, bootstrap and sweeps
//! - [`synth`]: synthetic scenarios with planted ground truth
//! - [`cli`]: the command-line front end used by the `icssm` binary

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod borrow;
pub mod cli;
pub mod error;
pub mod eval;
pub mod ic;
pub mod ontology;
pub mod quarter;
pub mod reports;
pub mod synth;

pub use analysis::{AnalysisConfig, Method, PairResult, SignalAnalysis};
pub use error::{Error, Result};
pub use quarter::QuarterIndex;
