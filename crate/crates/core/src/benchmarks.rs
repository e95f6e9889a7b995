//! Euclidean comparison estimators.
//!
//! Both reduce to a convex quadratic over the simplex,
//! `lambda' A lambda - 2 b' lambda + c`, assembled exactly from the data:
//!
//! * CDF-L2 integrates `(F_1 - sum_j lambda_j F_j)^2` over the merged atom
//!   grid, where every CDF is piecewise constant.
//! * Quantile-W2 matches `sum_j lambda_j Q_j` to `Q_1` on the midpoint grid
//!   `tau_k = (k - 0.5) / K`.
//!
//! The quadratic is solved by accelerated projected gradient with exact
//! Euclidean projection onto the simplex and a handful of random restarts.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::measures::{quantile_sorted, EmpiricalMeasure, SimplexWeights};

pub const DEFAULT_QUANTILE_GRID: usize = 512;
/// Stopping tolerance on the gradient-mapping norm.
pub const KKT_TOL: f64 = 1e-10;
pub const DEFAULT_RESTARTS: usize = 10;
const MIN_QUANTILE_GRID: usize = 16;

/// `lambda' A lambda - 2 b' lambda + c` on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSimplexProblem {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: f64,
}

/// Solver output: the minimizer, its objective and the final projected
/// gradient norm (the KKT residual).
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: SimplexWeights,
    pub objective: f64,
    pub kkt_residual: f64,
}

impl QuadraticSimplexProblem {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>, c: f64) -> Result<Self> {
        let j = b.len();
        if j == 0 {
            return Err(Error::Empty("quadratic problem"));
        }
        if a.len() != j || a.iter().any(|row| row.len() != j) {
            return Err(Error::LengthMismatch {
                expected: j,
                got: a.len(),
            });
        }
        let scale = a.iter().flatten().fold(1.0_f64, |m, v| m.max(v.abs()));
        for r in 0..j {
            for s in 0..r {
                if (a[r][s] - a[s][r]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidConfig(format!(
                        "gram matrix not symmetric at ({r}, {s})"
                    )));
                }
            }
        }
        if a.iter().flatten().chain(&b).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::NonFinite("quadratic problem"));
        }
        Ok(Self { a, b, c })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn gram(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let mut quad = 0.0;
        for (r, row) in self.a.iter().enumerate() {
            quad += lambda[r] * row.iter().zip(lambda).map(|(x, y)| x * y).sum::<f64>();
        }
        quad - 2.0 * self.b.iter().zip(lambda).map(|(x, y)| x * y).sum::<f64>() + self.c
    }

    pub fn gradient(&self, lambda: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, bj)| 2.0 * (row.iter().zip(lambda).map(|(x, y)| x * y).sum::<f64>() - bj))
            .collect()
    }

    /// Upper bound on the Lipschitz constant of the gradient, `2 * lambda_max(A)`,
    /// by power iteration with a safety margin.
    fn lipschitz(&self) -> f64 {
        let j = self.dim();
        let trace: f64 = (0..j).map(|r| self.a[r][r]).sum();
        if trace <= 0.0 {
            return 1.0;
        }
        let mut v: Vec<f64> = (0..j).map(|r| 1.0 + r as f64 * 1e-3).collect();
        let mut eig = 0.0;
        for _ in 0..200 {
            let w: Vec<f64> = self.a.iter().map(|row| row.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            eig = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
        }
        2.0 * (1.05 * eig).clamp(1e-300, trace.max(eig))
    }

    /// Norm of the gradient mapping `(lambda - P(lambda - s grad)) / s`.
    pub fn kkt_residual(&self, lambda: &[f64], step: f64) -> f64 {
        let g = self.gradient(lambda);
        let moved: Vec<f64> = lambda.iter().zip(&g).map(|(l, gi)| l - step * gi).collect();
        let p = project_simplex(&moved);
        lambda
            .iter()
            .zip(&p)
            .map(|(l, pi)| ((l - pi) / step).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Exact minimizer on the affine hull of the face spanned by the support
    /// of `x`, if it lies inside the simplex. Solves
    /// `A_SS l - b_S = nu 1, 1'l = 1` by Gaussian elimination.
    fn polish(&self, x: &[f64]) -> Option<Vec<f64>> {
        let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
        let k = support.len();
        let n = k + 1;
        let mut m = vec![vec![0.0; n + 1]; n];
        for (r, &i) in support.iter().enumerate() {
            for (c, &jj) in support.iter().enumerate() {
                m[r][c] = self.a[i][jj];
            }
            m[r][k] = -1.0;
            m[r][n] = self.b[i];
        }
        for c in 0..k {
            m[k][c] = 1.0;
        }
        m[k][n] = 1.0;
        let scale = m.iter().flat_map(|r| r[..n].iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
        for col in 0..n {
            let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
            if m[piv][col].abs() <= 1e-13 * scale {
                return None;
            }
            m.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = m[r][col] / m[col][col];
                    if f != 0.0 {
                        for c in col..=n {
                            m[r][c] -= f * m[col][c];
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; x.len()];
        for (r, &i) in support.iter().enumerate() {
            let v = m[r][n] / m[r][r];
            if !(v >= 0.0) {
                return None;
            }
            out[i] = v;
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        Some(out)
    }

    fn solve_from(&self, start: Vec<f64>, step: f64) -> Vec<f64> {
        let mut x = start;
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut fx = self.objective(&x);
        for it in 0..200_000 {
            if it % 16 == 0 {
                if self.kkt_residual(&x, step) < KKT_TOL {
                    break;
                }
                if let Some(p) = self.polish(&x) {
                    if self.objective(&p) <= fx && self.kkt_residual(&p, step) < KKT_TOL {
                        return p;
                    }
                }
            }
            let g = self.gradient(&y);
            let moved: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - step * gi).collect();
            let x_next = project_simplex(&moved);
            let f_next = self.objective(&x_next);
            if f_next > fx {
                // adaptive restart of the momentum
                t = 1.0;
                y = x.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = x_next
                .iter()
                .zip(&x)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            x = x_next;
            fx = f_next;
            t = t_next;
        }
        x
    }

    /// Minimizes over the simplex from the barycenter plus `restarts - 1`
    /// random starting points, keeping the best objective.
    pub fn solve<R: Rng + ?Sized>(&self, restarts: usize, rng: &mut R) -> Result<QpSolution> {
        let j = self.dim();
        let step = 1.0 / self.lipschitz();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for r in 0..restarts.max(1) {
            let start = if r == 0 {
                vec![1.0 / j as f64; j]
            } else {
                let e: Vec<f64> = (0..j).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v: f64| v / s).collect()
            };
            let x = self.solve_from(start, step);
            let f = self.objective(&x);
            if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
                best = Some((x, f));
            }
        }
        let (x, objective) = best.expect("at least one restart");
        let kkt_residual = self.kkt_residual(&x, step);
        Ok(QpSolution {
            weights: SimplexWeights::normalized(x)?,
            objective,
            kkt_residual,
        })
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn require_1d(treated: &EmpiricalMeasure, donors: &[EmpiricalMeasure]) -> Result<()> {
    if donors.is_empty() {
        return Err(Error::Empty("donor list"));
    }
    treated.require_1d()?;
    donors.iter().try_for_each(EmpiricalMeasure::require_1d)
}

/// CDF values of `m` at each grid point (right-continuous).
fn cdf_on_grid(m: &EmpiricalMeasure, grid: &[f64]) -> Result<Vec<f64>> {
    let atoms = m.sorted_atoms()?;
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    let mut acc = 0.0;
    for &x in grid {
        while k < atoms.len() && atoms[k].0 <= x {
            acc += atoms[k].1;
            k += 1;
        }
        out.push(acc);
    }
    Ok(out)
}

/// The CDF-L2 fitting problem, integrated exactly over the merged support.
pub fn cdf_l2_problem(treated: &EmpiricalMeasure, donors: &[EmpiricalMeasure]) -> Result<QuadraticSimplexProblem> {
    require_1d(treated, donors)?;
    let mut grid: Vec<f64> = treated
        .flat_points()
        .iter()
        .chain(donors.iter().flat_map(|d| d.flat_points()))
        .copied()
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let widths: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    let f1 = cdf_on_grid(treated, &grid)?;
    let fs: Vec<Vec<f64>> = donors.iter().map(|d| cdf_on_grid(d, &grid)).collect::<Result<_>>()?;
    let j = donors.len();
    let mut a = vec![vec![0.0; j]; j];
    let mut b = vec![0.0; j];
    let mut c = 0.0;
    for (i, &w) in widths.iter().enumerate() {
        c += w * f1[i] * f1[i];
        for r in 0..j {
            b[r] += w * f1[i] * fs[r][i];
            for s in r..j {
                a[r][s] += w * fs[r][i] * fs[s][i];
            }
        }
    }
    for r in 0..j {
        for s in 0..r {
            a[r][s] = a[s][r];
        }
    }
    QuadraticSimplexProblem::new(a, b, c)
}

/// Weights minimizing the integrated squared CDF gap.
pub fn cdf_l2_estimate<R: Rng + ?Sized>(
    treated: &EmpiricalMeasure,
    donors: &[EmpiricalMeasure],
    restarts: usize,
    rng: &mut R,
) -> Result<SimplexWeights> {
    Ok(cdf_l2_problem(treated, donors)?.solve(restarts, rng)?.weights)
}

fn midpoint_grid(k: usize) -> Result<Vec<f64>> {
    if k < MIN_QUANTILE_GRID {
        return Err(Error::InvalidConfig(format!(
            "quantile grid needs at least {MIN_QUANTILE_GRID} points, got {k}"
        )));
    }
    Ok((0..k).map(|i| (i as f64 + 0.5) / k as f64).collect())
}

fn quantiles_on_grid(m: &EmpiricalMeasure, taus: &[f64]) -> Result<Vec<f64>> {
    let atoms = m.sorted_atoms()?;
    Ok(taus.iter().map(|&t| quantile_sorted(atoms, t)).collect())
}

/// The quantile-W2 fitting problem on the midpoint grid of size `grid_size`.
pub fn quantile_w2_problem(
    treated: &EmpiricalMeasure,
    donors: &[EmpiricalMeasure],
    grid_size: usize,
) -> Result<QuadraticSimplexProblem> {
    require_1d(treated, donors)?;
    let taus = midpoint_grid(grid_size)?;
    let q1 = quantiles_on_grid(treated, &taus)?;
    let qs: Vec<Vec<f64>> = donors.iter().map(|d| quantiles_on_grid(d, &taus)).collect::<Result<_>>()?;
    let j = donors.len();
    let k = grid_size as f64;
    let mut a = vec![vec![0.0; j]; j];
    let mut b = vec![0.0; j];
    for r in 0..j {
        b[r] = qs[r].iter().zip(&q1).map(|(x, y)| x * y).sum::<f64>() / k;
        for s in r..j {
            let v = qs[r].iter().zip(&qs[s]).map(|(x, y)| x * y).sum::<f64>() / k;
            a[r][s] = v;
            a[s][r] = v;
        }
    }
    let c = q1.iter().map(|x| x * x).sum::<f64>() / k;
    QuadraticSimplexProblem::new(a, b, c)
}

/// Weights minimizing the squared gap between averaged donor quantiles and
/// the treated quantile function.
pub fn quantile_w2_estimate<R: Rng + ?Sized>(
    treated: &EmpiricalMeasure,
    donors: &[EmpiricalMeasure],
    grid_size: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<SimplexWeights> {
    Ok(quantile_w2_problem(treated, donors, grid_size)?
        .solve(restarts, rng)?
        .weights)
}

/// The quantile-averaging synthetic: `K` uniform atoms at
/// `sum_j lambda_j Q_j(tau_k)`. This is not the mixture of the donors.
pub fn quantile_average_synthesis(
    donors: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    grid_size: usize,
) -> Result<EmpiricalMeasure> {
    if donors.is_empty() {
        return Err(Error::Empty("donor list"));
    }
    if donors.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: donors.len(),
            got: lambda.len(),
        });
    }
    donors.iter().try_for_each(EmpiricalMeasure::require_1d)?;
    let taus = midpoint_grid(grid_size)?;
    let mut atoms = vec![0.0; grid_size];
    for (donor, &lj) in donors.iter().zip(lambda.values()) {
        if lj == 0.0 {
            continue;
        }
        for (a, q) in atoms.iter_mut().zip(quantiles_on_grid(donor, &taus)?) {
            *a += lj * q;
        }
    }
    EmpiricalMeasure::from_values(&atoms)
}
