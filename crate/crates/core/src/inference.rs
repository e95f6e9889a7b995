//! Placebo permutation test of no distributional effect.
//!
//! Every unit takes a turn as the pseudo-treated unit, weights are fitted on
//! the pre-treatment window against the remaining units, and the effect
//! statistic is the exact W1 distance between observed and synthetic
//! post-treatment cells, averaged over post periods. The p-value is the share
//! of units whose statistic is at least the treated one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_method, EstimatorConfig, Method};
use crate::exec::par_map;
use crate::measures::{weighted_mixture, EmpiricalMeasure, PanelDataset, SimplexWeights};
use crate::ot::{w1_exact_1d, w1_exact_lp, DEFAULT_MAX_ATOMS};
use crate::rng::derive_seed;

/// Outcome of [`placebo_distribution`]. Index 0 is the actually treated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub units: Vec<String>,
    /// Effect statistic of each unit when it plays the treated role.
    pub statistics: Vec<f64>,
    /// Number of units with a statistic at least the treated one (itself included).
    pub rank_count: usize,
    pub p_value: f64,
    /// Donor labels of each placebo fit, matching `weights`.
    pub donors: Vec<Vec<String>>,
    pub weights: Vec<SimplexWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaceboOptions {
    /// Drop the actually treated unit from the donor pools of the placebo fits.
    pub exclude_treated_from_donors: bool,
    pub jobs: usize,
}

impl Default for PlaceboOptions {
    fn default() -> Self {
        Self {
            exclude_treated_from_donors: false,
            jobs: 1,
        }
    }
}

/// Exact W1 between observed and synthetic cells: the sorted sweep in 1D,
/// the transport LP otherwise.
pub fn effect_statistic(observed: &EmpiricalMeasure, synthetic: &EmpiricalMeasure) -> Result<f64> {
    if observed.dim() != synthetic.dim() {
        return Err(Error::DimensionMismatch {
            expected: observed.dim(),
            got: synthetic.dim(),
        });
    }
    let cost = if observed.dim() == 1 {
        w1_exact_1d(observed, synthetic)?
    } else {
        w1_exact_lp(observed, synthetic, DEFAULT_MAX_ATOMS)?
    };
    Ok(cost.value.max(0.0))
}

/// Mean effect statistic over the post-treatment periods of `panel` for its
/// treated unit under `lambda`.
pub fn post_period_statistic(panel: &PanelDataset, lambda: &SimplexWeights) -> Result<f64> {
    let periods = panel.cutoff()..panel.periods().len();
    let n = periods.len() as f64;
    let mut total = 0.0;
    for t in periods {
        let synth = weighted_mixture(&panel.donors(t), lambda)?;
        total += effect_statistic(panel.treated(t), &synth)?;
    }
    Ok(total / n)
}

/// `#{j : stat_j >= stat_0} / len`, ties counted against the treated unit.
pub fn permutation_p_value(statistics: &[f64]) -> Result<(usize, f64)> {
    let first = *statistics.first().ok_or(Error::Empty("statistics"))?;
    if statistics.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("placebo statistics"));
    }
    let count = statistics.iter().filter(|&&s| s >= first).count();
    Ok((count, count as f64 / statistics.len() as f64))
}

fn label_key(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// The placebo panel for `unit`: that unit first, then the other units in
/// label order. Both ordering and the per-fit seed depend only on labels, so
/// a unit's statistic does not depend on which unit is called treated.
fn placebo_panel(panel: &PanelDataset, unit: usize, exclude: Option<usize>) -> Result<PanelDataset> {
    let mut rest: Vec<usize> = (0..panel.units().len())
        .filter(|&u| u != unit && Some(u) != exclude)
        .collect();
    rest.sort_by(|&a, &b| panel.units()[a].cmp(&panel.units()[b]));
    let mut order = vec![unit];
    order.extend(rest);
    let cells = order
        .iter()
        .map(|&u| (0..panel.periods().len()).map(|t| panel.cell(u, t).clone()).collect())
        .collect();
    PanelDataset::new(
        order.iter().map(|&u| panel.units()[u].clone()).collect(),
        panel.periods().to_vec(),
        panel.cutoff(),
        cells,
    )
}

/// Runs the permutation test. `fit` receives a panel whose unit 0 is the
/// pseudo-treated unit plus a seed derived from `seed` and that unit's label,
/// and returns weights over the panel's donors. Any failed fit aborts the
/// test.
pub fn placebo_distribution<F>(panel: &PanelDataset, seed: u64, options: PlaceboOptions, fit: F) -> Result<PlaceboResult>
where
    F: Fn(&PanelDataset, u64) -> Result<SimplexWeights> + Sync,
{
    let n_units = panel.units().len();
    let min_units = if options.exclude_treated_from_donors { 4 } else { 3 };
    if n_units < min_units {
        return Err(Error::InvalidPanel(format!(
            "placebo test needs at least {} units, found {n_units}",
            min_units
        )));
    }
    let exclude = options.exclude_treated_from_donors.then_some(0);
    let results = par_map(n_units, options.jobs, |u| -> Result<(f64, Vec<String>, SimplexWeights)> {
        let exclude = exclude.filter(|&e| e != u);
        let p = placebo_panel(panel, u, exclude)?;
        let unit_seed = derive_seed(seed, &[label_key(&panel.units()[u])]);
        let wrap = |e: Error| Error::PlaceboFit {
            unit: panel.units()[u].clone(),
            source: Box::new(e),
        };
        let w = fit(&p, unit_seed).map_err(wrap)?;
        if w.len() != p.n_donors() {
            return Err(wrap(Error::LengthMismatch {
                expected: p.n_donors(),
                got: w.len(),
            }));
        }
        let stat = post_period_statistic(&p, &w).map_err(wrap)?;
        Ok((stat, p.units()[1..].to_vec(), w))
    });
    let mut statistics = Vec::with_capacity(n_units);
    let mut donors = Vec::with_capacity(n_units);
    let mut weights = Vec::with_capacity(n_units);
    for r in results {
        let (s, d, w) = r?;
        statistics.push(s);
        donors.push(d);
        weights.push(w);
    }
    let (rank_count, p_value) = permutation_p_value(&statistics)?;
    Ok(PlaceboResult {
        units: panel.units().to_vec(),
        statistics,
        rank_count,
        p_value,
        donors,
        weights,
    })
}

/// [`placebo_distribution`] with one of the built-in weight estimators.
pub fn placebo_with_method(
    panel: &PanelDataset,
    method: Method,
    config: &EstimatorConfig,
    options: PlaceboOptions,
) -> Result<PlaceboResult> {
    config.validate()?;
    placebo_distribution(panel, config.seed, options, |p, seed| {
        let cfg = EstimatorConfig {
            seed,
            ..config.clone()
        };
        Ok(fit_method(p, method, &cfg)?.aggregated)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistic_basics() {
        let a = EmpiricalMeasure::from_values(&[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(effect_statistic(&a, &a).unwrap(), 0.0);
        let d0 = EmpiricalMeasure::dirac(&[0.0]).unwrap();
        let d2 = EmpiricalMeasure::dirac(&[2.0]).unwrap();
        assert_eq!(effect_statistic(&d0, &d2).unwrap(), 2.0);
        let p2 = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(effect_statistic(&d0, &p2).is_err());
    }

    #[test]
    fn p_value_counts_ties() {
        assert_eq!(permutation_p_value(&[1.0; 5]).unwrap(), (5, 1.0));
        assert_eq!(permutation_p_value(&[9.0, 1.0, 2.0, 3.0, 4.0]).unwrap(), (1, 0.2));
        assert_eq!(permutation_p_value(&[2.0, 1.0, 2.0, 3.0, 0.0]).unwrap().0, 3);
    }
}
