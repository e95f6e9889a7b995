//! Distributional synthetic controls by Wasserstein-1 minimization.
//!
//! The synthetic control for a treated unit is the mixture
//! `sum_j lambda_j P_j` of donor outcome distributions. Weights are fitted
//! per pre-treatment period by an adversarial minimax: a Leaky-ReLU critic
//! approximates the Kantorovich potential under a gradient penalty, and the
//! weights follow entropic mirror descent on the simplex. Period estimates
//! are averaged into the final weights.
//!
//! Alongside the estimator the crate ships exact transport oracles
//! ([`ot`]), the CDF-L2 and quantile-W2 comparison estimators
//! ([`benchmarks`]), placebo permutation inference ([`inference`]) and the
//! simulation designs used to stress the estimator ([`simlab`]).

pub mod benchmarks;
pub mod cli;
pub mod critic;
pub mod error;
pub mod estimator;
mod exec;
pub mod inference;
pub mod measures;
pub mod ot;
pub mod panel_io;
pub mod rng;
pub mod simlab;

pub use error::{Error, Result};
pub use measures::{EmpiricalMeasure, PanelDataset, SimplexWeights};
