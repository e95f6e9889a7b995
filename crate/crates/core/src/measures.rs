//! Empirical measures, simplex weights and panels of measures.
//!
//! An [`EmpiricalMeasure`] is a finite weighted point cloud. Uniform weights
//! are the usual construction from micro-samples; nonuniform weights appear
//! as soon as donors are mixed, so mixtures are exact rather than resampled.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const MASS_TOL: f64 = 1e-9;

/// A finite probability measure `sum_k w_k * delta_{y_k}` on `R^d`.
///
/// Points are stored row-major in a flat buffer. Duplicate points are allowed
/// and never merged.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
    // (value, mass) sorted by value, only for dim == 1
    sorted: OnceLock<Vec<(f64, f64)>>,
    cumulative: OnceLock<Vec<f64>>,
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.points == other.points && self.weights == other.weights
    }
}

impl EmpiricalMeasure {
    /// Uniform empirical measure over the given rows.
    pub fn from_samples<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("sample rows"))?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::Empty("sample dimension"));
        }
        let mut points = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            points.extend_from_slice(row);
        }
        Self::uniform_flat(dim, points)
    }

    /// Uniform measure over scalar samples.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("sample rows"));
        }
        Self::uniform_flat(1, values.to_vec())
    }

    /// Uniform measure from a row-major buffer of `points.len() / dim` rows.
    pub fn uniform_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::Empty("sample rows"));
        }
        if points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: points.len() % dim,
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample points"));
        }
        let n = points.len() / dim;
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
            uniform: true,
            sorted: OnceLock::new(),
            cumulative: OnceLock::new(),
        })
    }

    /// Weighted measure; weights must be nonnegative and sum to one.
    pub fn weighted_flat(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() {
            return Err(Error::Empty("sample rows"));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::LengthMismatch {
                expected: weights.len() * dim,
                got: points.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample points"));
        }
        check_distribution(&weights)?;
        let n = weights.len();
        let uniform = weights.iter().all(|&w| w == weights[0]) && (weights[0] * n as f64 - 1.0).abs() < MASS_TOL;
        Ok(Self {
            dim,
            points,
            weights,
            uniform,
            sorted: OnceLock::new(),
            cumulative: OnceLock::new(),
        })
    }

    /// Single point mass.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::from_samples(&[point])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Row-major point buffer.
    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, &w) in self.points().zip(&self.weights) {
            for (mi, &pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    /// Returns a copy with every coordinate mapped through `f`.
    pub fn map_points(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let points = self.points.iter().map(|&v| f(v)).collect();
        Self::weighted_flat(self.dim, points, self.weights.clone())
    }

    /// Draws one atom index according to the atom weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.uniform {
            return rng.random_range(0..self.len());
        }
        let cum = self.cumulative.get_or_init(|| {
            let mut acc = 0.0;
            self.weights
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect()
        });
        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
        cum.partition_point(|&c| c <= u).min(self.len() - 1)
    }

    /// Atoms sorted by value with their masses (1D only).
    pub fn sorted_atoms(&self) -> Result<&[(f64, f64)]> {
        self.require_1d()?;
        Ok(self.sorted.get_or_init(|| {
            let mut atoms: Vec<(f64, f64)> =
                self.points.iter().copied().zip(self.weights.iter().copied()).collect();
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms
        }))
    }

    /// Right-continuous CDF `F(x) = sum_{y_k <= x} w_k`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        let atoms = self.sorted_atoms()?;
        let mut acc = 0.0;
        for &(y, w) in atoms {
            if y > x {
                break;
            }
            acc += w;
        }
        Ok(acc.min(1.0))
    }

    /// Left-continuous generalized inverse `Q(tau) = inf { x : F(x) >= tau }`.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidProbability(tau));
        }
        let atoms = self.sorted_atoms()?;
        Ok(quantile_sorted(atoms, tau))
    }

    pub(crate) fn require_1d(&self) -> Result<()> {
        if self.dim != 1 {
            return Err(Error::NotOneDimensional(self.dim));
        }
        Ok(())
    }
}

/// Generalized inverse on pre-sorted atoms. Cumulative mass is compared with
/// a 1e-12 slack so that exact arithmetic ties (e.g. 0.25 + 0.25 vs 0.5) are
/// not lost to rounding.
pub(crate) fn quantile_sorted(atoms: &[(f64, f64)], tau: f64) -> f64 {
    let mut acc = 0.0;
    for &(y, w) in atoms {
        acc += w;
        if acc >= tau - 1e-12 {
            return y;
        }
    }
    atoms[atoms.len() - 1].0
}

fn check_distribution(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    if let Some(v) = values.iter().find(|&&v| v < 0.0) {
        return Err(Error::InvalidWeights(format!("negative entry {v}")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidWeights(format!("entries sum to {total}, not 1")));
    }
    Ok(())
}

/// A point of the probability simplex, one entry per donor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("simplex weights"));
        }
        check_distribution(&values)?;
        Ok(Self(values))
    }

    pub fn uniform(j: usize) -> Self {
        assert!(j > 0, "simplex needs at least one coordinate");
        Self(vec![1.0 / j as f64; j])
    }

    /// The vertex `e_k` of the `j`-simplex.
    pub fn vertex(j: usize, k: usize) -> Self {
        assert!(k < j);
        let mut v = vec![0.0; j];
        v[k] = 1.0;
        Self(v)
    }

    /// Rescales a nonnegative vector with positive sum onto the simplex.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidWeights("entries must be finite and nonnegative".into()));
        }
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidWeights("entries sum to zero".into()));
        }
        Self::new(values.into_iter().map(|v| v / total).collect())
    }

    /// Convex combination `sum_t w_t * lambda_t`.
    pub fn average(items: &[SimplexWeights], temporal: &[f64]) -> Result<Self> {
        let first = items.first().ok_or(Error::Empty("weight vectors"))?;
        if temporal.len() != items.len() {
            return Err(Error::LengthMismatch {
                expected: items.len(),
                got: temporal.len(),
            });
        }
        let mut out = vec![0.0; first.len()];
        for (item, &w) in items.iter().zip(temporal) {
            if item.len() != out.len() {
                return Err(Error::LengthMismatch {
                    expected: out.len(),
                    got: item.len(),
                });
            }
            for (o, v) in out.iter_mut().zip(item.values()) {
                *o += w * v;
            }
        }
        Self::new(out)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Shannon entropy term `sum_j lambda_j log lambda_j` (0 log 0 = 0).
    pub fn neg_entropy(&self) -> f64 {
        self.0.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
    }

    /// Root mean squared difference to another weight vector.
    pub fn rmse(&self, other: &SimplexWeights) -> f64 {
        let n = self.0.len() as f64;
        (self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Exact mixture `sum_j lambda_j P_j`. Donors with zero weight contribute no
/// atoms; every other atom keeps its position and has its mass scaled. A
/// vertex weight returns that donor unchanged.
pub fn weighted_mixture(donors: &[EmpiricalMeasure], lambda: &SimplexWeights) -> Result<EmpiricalMeasure> {
    let first = donors.first().ok_or(Error::Empty("donor list"))?;
    if donors.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: donors.len(),
            got: lambda.len(),
        });
    }
    let dim = first.dim();
    if let Some(bad) = donors.iter().find(|d| d.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    if let Some(only) = lambda.values().iter().position(|&l| l == 1.0) {
        return Ok(donors[only].clone());
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (donor, &lj) in donors.iter().zip(lambda.values()) {
        if lj == 0.0 {
            continue;
        }
        points.extend_from_slice(donor.flat_points());
        weights.extend(donor.weights().iter().map(|w| lj * w));
    }
    // absorb roundoff so the result passes the unit-mass check exactly
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    EmpiricalMeasure::weighted_flat(dim, points, weights)
}

/// Draws `n` points from the mixture: a donor by `lambda`, then an atom of
/// that donor by its atom weights.
pub fn sample_mixture<R: Rng + ?Sized>(
    donors: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let flat = sample_mixture_flat(donors, lambda, n, rng)?;
    let dim = donors[0].dim();
    Ok(flat.chunks_exact(dim).map(<[f64]>::to_vec).collect())
}

/// Same as [`sample_mixture`] but returns a row-major buffer.
pub fn sample_mixture_flat<R: Rng + ?Sized>(
    donors: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("sample count"));
    }
    if donors.is_empty() {
        return Err(Error::Empty("donor list"));
    }
    if donors.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: donors.len(),
            got: lambda.len(),
        });
    }
    let dim = donors[0].dim();
    let mut cum = Vec::with_capacity(lambda.len());
    let mut acc = 0.0;
    for &l in lambda.values() {
        acc += l;
        cum.push(acc);
    }
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let mut j = cum.partition_point(|&c| c <= u).min(donors.len() - 1);
        // never land on a zero-weight donor through roundoff at the top end
        while lambda[j] == 0.0 && j > 0 {
            j -= 1;
        }
        let k = donors[j].sample_index(rng);
        out.extend_from_slice(donors[j].point(k));
    }
    Ok(out)
}

/// A balanced grid of empirical measures indexed by unit and period.
///
/// Unit 0 is the treated unit; the remaining units form the donor pool.
/// Periods `0..cutoff` are pre-treatment, so `cutoff` is the number of
/// pre-treatment periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<String>,
    periods: Vec<String>,
    cutoff: usize,
    cells: Vec<Vec<EmpiricalMeasure>>,
}

impl PanelDataset {
    pub fn new(
        units: Vec<String>,
        periods: Vec<String>,
        cutoff: usize,
        cells: Vec<Vec<EmpiricalMeasure>>,
    ) -> Result<Self> {
        if units.len() < 2 {
            return Err(Error::InvalidPanel("need a treated unit and at least one donor".into()));
        }
        if cutoff < 1 || cutoff >= periods.len() {
            return Err(Error::InvalidPanel(format!(
                "cutoff {cutoff} must be in 1..{} (periods: {})",
                periods.len(),
                periods.len()
            )));
        }
        if cells.len() != units.len() {
            return Err(Error::InvalidPanel(format!(
                "{} unit rows for {} units",
                cells.len(),
                units.len()
            )));
        }
        let dim = cells[0].first().map(EmpiricalMeasure::dim).unwrap_or(0);
        for (u, row) in cells.iter().enumerate() {
            if row.len() != periods.len() {
                return Err(Error::InvalidPanel(format!(
                    "unit `{}` has {} cells for {} periods",
                    units[u],
                    row.len(),
                    periods.len()
                )));
            }
            if let Some(bad) = row.iter().find(|m| m.dim() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: bad.dim(),
                });
            }
        }
        Ok(Self {
            units,
            periods,
            cutoff,
            cells,
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.cells[0][0].dim()
    }

    pub fn n_donors(&self) -> usize {
        self.units.len() - 1
    }

    pub fn cell(&self, unit: usize, period: usize) -> &EmpiricalMeasure {
        &self.cells[unit][period]
    }

    pub fn treated(&self, period: usize) -> &EmpiricalMeasure {
        &self.cells[0][period]
    }

    /// Donor cells at a period, in donor order.
    pub fn donors(&self, period: usize) -> Vec<EmpiricalMeasure> {
        self.cells[1..].iter().map(|row| row[period].clone()).collect()
    }

    pub fn period_index(&self, label: &str) -> Result<usize> {
        self.periods
            .iter()
            .position(|p| p == label)
            .ok_or_else(|| Error::UnknownPeriod(label.to_string()))
    }

    pub fn unit_index(&self, label: &str) -> Result<usize> {
        self.units
            .iter()
            .position(|u| u == label)
            .ok_or_else(|| Error::UnknownUnit(label.to_string()))
    }

    /// Reorders units so that `unit` becomes the treated unit. The former
    /// treated unit joins the donor pool in its place.
    pub fn with_treated(&self, unit: usize) -> Self {
        let mut order: Vec<usize> = (0..self.units.len()).collect();
        order.swap(0, unit);
        self.reordered(&order)
    }

    /// Keeps `unit` as treated and drops `excluded` from the donor pool.
    pub fn without_unit(&self, excluded: usize) -> Result<Self> {
        let order: Vec<usize> = (0..self.units.len()).filter(|&u| u != excluded).collect();
        let p = self.reordered(&order);
        Self::new(p.units, p.periods, p.cutoff, p.cells)
    }

    /// Replaces one cell.
    pub fn with_cell(&self, unit: usize, period: usize, cell: EmpiricalMeasure) -> Result<Self> {
        let mut cells = self.cells.clone();
        cells[unit][period] = cell;
        Self::new(self.units.clone(), self.periods.clone(), self.cutoff, cells)
    }

    fn reordered(&self, order: &[usize]) -> Self {
        Self {
            units: order.iter().map(|&u| self.units[u].clone()).collect(),
            periods: self.periods.clone(),
            cutoff: self.cutoff,
            cells: order.iter().map(|&u| self.cells[u].clone()).collect(),
        }
    }
}
