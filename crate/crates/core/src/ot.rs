//! Exact optimal-transport distances between discrete measures.
//!
//! One-dimensional distances are computed from the merged sorted support in
//! `O(n log n)`. The multivariate `W1` solves the transport linear program by
//! successive shortest paths and is only meant for small validation
//! instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

/// Default atom budget for [`w1_exact_lp`].
pub const DEFAULT_MAX_ATOMS: usize = 128;

/// A transport distance together with its order (1 for `W1`, 2 for `W2`).
/// `value` is the distance itself, in outcome units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportCost {
    pub value: f64,
    pub order: u8,
}

/// Signed atoms of `P - Q` sorted by location.
fn signed_sweep(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<Vec<(f64, f64)>> {
    p.require_1d()?;
    q.require_1d()?;
    let mut atoms: Vec<(f64, f64)> = p
        .flat_points()
        .iter()
        .copied()
        .zip(p.weights().iter().copied())
        .chain(q.flat_points().iter().copied().zip(q.weights().iter().map(|w| -w)))
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(atoms)
}

/// Integrates `phi(F_P - F_Q)` over the real line.
fn integrate_cdf_gap(p: &EmpiricalMeasure, q: &EmpiricalMeasure, phi: impl Fn(f64) -> f64) -> Result<f64> {
    let atoms = signed_sweep(p, q)?;
    let mut total = 0.0;
    let mut gap = 0.0;
    for pair in atoms.windows(2) {
        gap += pair[0].1;
        let width = pair[1].0 - pair[0].0;
        if width > 0.0 {
            total += phi(gap) * width;
        }
    }
    Ok(total)
}

/// `W1(P, Q) = int |F_P - F_Q| dx` for one-dimensional measures.
pub fn w1_exact_1d(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<TransportCost> {
    let value = integrate_cdf_gap(p, q, f64::abs)?;
    Ok(TransportCost { value, order: 1 })
}

/// `int (F_P - F_Q)^2 dx` for one-dimensional measures.
pub fn cdf_l2_sq(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<f64> {
    integrate_cdf_gap(p, q, |g| g * g)
}

/// `W2(P, Q)` from the exact integral of the squared quantile gap. Both
/// quantile functions are step functions, so the integral is a finite sum
/// over the merged cumulative-mass breakpoints.
pub fn w2_exact_1d(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<TransportCost> {
    let a = p.sorted_atoms()?;
    let b = q.sorted_atoms()?;
    let (mut i, mut k) = (0, 0);
    let (mut rem_a, mut rem_b) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let step = rem_a.min(rem_b);
        let d = a[i].0 - b[k].0;
        total += step * d * d;
        rem_a -= step;
        rem_b -= step;
        if rem_a <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            rem_a += a[i].1;
        }
        if rem_b <= 1e-15 {
            k += 1;
            if k == b.len() {
                break;
            }
            rem_b += b[k].1;
        }
    }
    Ok(TransportCost {
        value: total.max(0.0).sqrt(),
        order: 2,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact `W1` with Euclidean ground cost, solving the transport LP.
///
/// Intended for validation on small supports: the combined atom count of
/// both measures must not exceed `max_atoms`.
pub fn w1_exact_lp(p: &EmpiricalMeasure, q: &EmpiricalMeasure, max_atoms: usize) -> Result<TransportCost> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let atoms = p.len() + q.len();
    if atoms > max_atoms {
        return Err(Error::InstanceTooLarge {
            atoms,
            limit: max_atoms,
        });
    }
    let (n, m) = (p.len(), q.len());
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| euclidean(p.point(i), q.point(j)))
        .collect();
    let flow = transport_plan(p.weights(), q.weights(), &cost);
    let value = flow.iter().zip(&cost).map(|(f, c)| f * c).sum();
    Ok(TransportCost { value, order: 1 })
}

const FLOW_EPS: f64 = 1e-14;

/// Min-cost transport plan for a dense `n x m` cost matrix by successive
/// shortest augmenting paths with Dijkstra on reduced costs.
fn transport_plan(supply: &[f64], demand: &[f64], cost: &[f64]) -> Vec<f64> {
    let (n, m) = (supply.len(), demand.len());
    let nodes = n + m;
    let mut flow = vec![0.0; n * m];
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let mut pot = vec![0.0; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    loop {
        if !s.iter().any(|&v| v > FLOW_EPS) || !d.iter().any(|&v| v > FLOW_EPS) {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        for i in 0..n {
            if s[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        // dense Dijkstra over sources (0..n) and sinks (n..n+m)
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    let rc = (cost[u * m + j] + pot[u] - pot[v]).max(0.0);
                    if dist[u] + rc < dist[v] {
                        dist[v] = dist[u] + rc;
                        prev[v] = u;
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[i * m + j] > FLOW_EPS {
                        let rc = (-cost[i * m + j] + pot[u] - pot[i]).max(0.0);
                        if dist[u] + rc < dist[i] {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        let target = (0..m)
            .filter(|&j| d[j] > FLOW_EPS && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]));
        let Some(tj) = target else { break };
        let t = n + tj;
        let reach = dist[t];
        for v in 0..nodes {
            pot[v] += dist[v].min(reach);
        }
        // bottleneck along the path
        let mut amount = d[tj];
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                // backward edge sink u -> source v cancels flow
                amount = amount.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        let root = v;
        amount = amount.min(s[root]);
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[u * m + (v - n)] += amount;
            } else {
                flow[v * m + (u - n)] -= amount;
            }
            v = u;
        }
        s[root] -= amount;
        d[tj] -= amount;
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{weighted_mixture, SimplexWeights};

    fn m(values: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_values(values).unwrap()
    }

    #[test]
    fn w1_point_masses_and_identity() {
        assert_eq!(w1_exact_1d(&m(&[0.0]), &m(&[3.0])).unwrap().value, 3.0);
        let a = m(&[0.3, -1.0, 2.5]);
        assert_eq!(w1_exact_1d(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn w1_matches_coupling_enumeration() {
        // both perfect matchings of {0,1} onto {2,4}: (2+3)/2 and (4+1)/2
        let a = m(&[0.0, 1.0]);
        let b = m(&[2.0, 4.0]);
        let brute = f64::min((2.0 + 3.0) / 2.0, (4.0 + 1.0) / 2.0);
        assert!((w1_exact_1d(&a, &b).unwrap().value - brute).abs() < 1e-15);
        assert_eq!(brute, 2.5);
    }

    #[test]
    fn w2_cases() {
        assert_eq!(w2_exact_1d(&m(&[1.0]), &m(&[-2.0])).unwrap().value, 3.0);
        let a = m(&[0.0, 2.0]);
        assert_eq!(w2_exact_1d(&a, &a).unwrap().value, 0.0);
        assert!((w2_exact_1d(&a, &m(&[1.0, 3.0])).unwrap().value - 1.0).abs() < 1e-15);
        // unequal atom counts: {0,1,2} vs {0,3}
        // quantile gaps on [0,1/3),[1/3,1/2),[1/2,2/3),[2/3,1): 0,1,2,1
        let v = w2_exact_1d(&m(&[0.0, 1.0, 2.0]), &m(&[0.0, 3.0])).unwrap().value;
        let expected = (1.0 / 6.0 * 1.0 + 1.0 / 6.0 * 4.0 + 1.0 / 3.0 * 1.0_f64).sqrt();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn cdf_l2_cases() {
        let a = m(&[0.0, 1.0]);
        assert_eq!(cdf_l2_sq(&a, &a).unwrap(), 0.0);
        assert_eq!(cdf_l2_sq(&m(&[0.0]), &m(&[1.0])).unwrap(), 1.0);
        for l in [0.5, 2.0, 7.0] {
            assert!((cdf_l2_sq(&m(&[0.0]), &m(&[l])).unwrap() - l).abs() < 1e-12);
            assert!((w1_exact_1d(&m(&[0.0]), &m(&[l])).unwrap().value - l).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_only() {
        let planar = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(matches!(w1_exact_1d(&planar, &planar), Err(Error::NotOneDimensional(2))));
        assert!(matches!(w2_exact_1d(&planar, &planar), Err(Error::NotOneDimensional(2))));
        assert!(matches!(cdf_l2_sq(&planar, &planar), Err(Error::NotOneDimensional(2))));
    }

    #[test]
    fn lp_cases() {
        let a = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = EmpiricalMeasure::dirac(&[3.0, 4.0]).unwrap();
        assert!((w1_exact_lp(&a, &b, DEFAULT_MAX_ATOMS).unwrap().value - 5.0).abs() < 1e-12);

        let p = EmpiricalMeasure::from_samples(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let q = EmpiricalMeasure::from_samples(&[[0.0, 1.0], [1.0, 1.0]]).unwrap();
        // the two perfect matchings cost 1 and sqrt(2)
        let brute = f64::min(1.0, 2f64.sqrt());
        assert!((w1_exact_lp(&p, &q, DEFAULT_MAX_ATOMS).unwrap().value - brute).abs() < 1e-12);
        assert!(w1_exact_lp(&p, &p, DEFAULT_MAX_ATOMS).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn lp_handles_nonuniform_weights() {
        let donors = [m(&[0.0]), m(&[5.0])];
        let mix = weighted_mixture(&donors, &SimplexWeights::new(vec![0.3, 0.7]).unwrap()).unwrap();
        let target = m(&[1.0, 2.0, 4.0]);
        let lp = w1_exact_lp(&mix, &target, DEFAULT_MAX_ATOMS).unwrap().value;
        let exact = w1_exact_1d(&mix, &target).unwrap().value;
        assert!((lp - exact).abs() < 1e-12, "{lp} vs {exact}");
    }

    #[test]
    fn lp_rejects_large_instances() {
        let big = m(&(0..100).map(f64::from).collect::<Vec<_>>());
        assert!(matches!(
            w1_exact_lp(&big, &big, DEFAULT_MAX_ATOMS),
            Err(Error::InstanceTooLarge { atoms: 200, limit: 128 })
        ));
    }
}
