use distsynth::benchmarks::{
    cdf_l2_estimate, cdf_l2_problem, quantile_average_synthesis, quantile_w2_estimate, quantile_w2_problem,
    QuadraticSimplexProblem, DEFAULT_QUANTILE_GRID, DEFAULT_RESTARTS,
};
use distsynth::measures::weighted_mixture;
use distsynth::ot::w1_exact_1d;
use distsynth::rng::stream;
use distsynth::simlab::{detect_modes, poisson_inversion};
use distsynth::{EmpiricalMeasure, Error, SimplexWeights};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn psd_instance(j: usize, rank: usize, entries: &[f64], linear: &[f64]) -> QuadraticSimplexProblem {
    // A = M'M with M of shape rank x j
    let m: Vec<&[f64]> = entries.chunks(j).take(rank).collect();
    let a: Vec<Vec<f64>> = (0..j)
        .map(|r| (0..j).map(|s| m.iter().map(|row| row[r] * row[s]).sum()).collect())
        .collect();
    QuadraticSimplexProblem::new(a, linear[..j].to_vec(), 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qp_solution_satisfies_kkt(
        j in 2usize..8,
        rank in 1usize..8,
        entries in prop::collection::vec(-3.0..3.0f64, 64),
        linear in prop::collection::vec(-3.0..3.0f64, 8),
        seed in any::<u64>(),
    ) {
        let problem = psd_instance(j, rank, &entries, &linear);
        let sol = problem.solve(DEFAULT_RESTARTS, &mut stream(seed, &[])).unwrap();
        prop_assert!(sol.kkt_residual < 1e-7, "residual {:e}", sol.kkt_residual);

        // multiplier form: gradient equal on the support, no smaller off it
        let lam = sol.weights.values();
        let g = problem.gradient(lam);
        let scale = 1.0 + g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let nu = lam.iter().zip(&g).filter(|(l, _)| **l > 1e-9).map(|(_, gi)| *gi).fold(f64::INFINITY, f64::min);
        for (l, gi) in lam.iter().zip(&g) {
            if *l > 1e-6 {
                prop_assert!((gi - nu).abs() < 1e-6 * scale, "support gradient {} vs {}", gi, nu);
            }
            prop_assert!(*gi >= nu - 1e-6 * scale, "off-support gradient {} below {}", gi, nu);
        }
    }
}

fn normal_cell(seed: u64, n: usize, shift: f64) -> EmpiricalMeasure {
    let mut rng = stream(seed, &[]);
    let v: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); shift + z }).collect();
    EmpiricalMeasure::from_values(&v).unwrap()
}

fn exact_donor_case() -> (EmpiricalMeasure, Vec<EmpiricalMeasure>) {
    let treated = normal_cell(1, 150, 0.0);
    let donors = vec![
        normal_cell(2, 150, 20.0),
        treated.clone(),
        normal_cell(3, 150, 40.0),
        normal_cell(4, 150, 60.0),
    ];
    (treated, donors)
}

#[test]
fn cdf_l2_recovers_an_exact_donor() {
    let (treated, donors) = exact_donor_case();
    let lam = cdf_l2_estimate(&treated, &donors, DEFAULT_RESTARTS, &mut stream(0, &[])).unwrap();
    assert!((lam[1] - 1.0).abs() < 1e-6, "weights {:?}", lam.values());
    let problem = cdf_l2_problem(&treated, &donors).unwrap();
    assert!(problem.objective(lam.values()).abs() < 1e-9);
}

#[test]
fn quantile_w2_recovers_an_exact_donor() {
    let (treated, donors) = exact_donor_case();
    let lam =
        quantile_w2_estimate(&treated, &donors, DEFAULT_QUANTILE_GRID, DEFAULT_RESTARTS, &mut stream(0, &[])).unwrap();
    assert!((lam[1] - 1.0).abs() < 1e-6, "weights {:?}", lam.values());
}

#[test]
fn identical_donors_give_a_zero_objective() {
    let treated = normal_cell(9, 80, 1.0);
    let donors = vec![treated.clone(), treated.clone()];
    let problem = cdf_l2_problem(&treated, &donors).unwrap();
    let sol = problem.solve(DEFAULT_RESTARTS, &mut stream(1, &[])).unwrap();
    assert!(sol.objective.abs() < 1e-10, "objective {:e}", sol.objective);
}

fn two_point_case() -> (EmpiricalMeasure, Vec<EmpiricalMeasure>) {
    let donors = vec![EmpiricalMeasure::dirac(&[0.0]).unwrap(), EmpiricalMeasure::dirac(&[10.0]).unwrap()];
    let treated = EmpiricalMeasure::from_values(&[0.0, 10.0]).unwrap();
    (treated, donors)
}

#[test]
fn quantile_fit_of_a_two_point_mixture() {
    let (treated, donors) = two_point_case();
    let problem = quantile_w2_problem(&treated, &donors, DEFAULT_QUANTILE_GRID).unwrap();
    let sol = problem.solve(DEFAULT_RESTARTS, &mut stream(2, &[])).unwrap();
    assert!((sol.weights[0] - 0.5).abs() < 1e-6, "weights {:?}", sol.weights.values());
    assert!((sol.objective - 25.0).abs() < 1e-6, "objective {}", sol.objective);
}

#[test]
fn mixture_and_quantile_average_diverge() {
    let (treated, donors) = two_point_case();
    let half = SimplexWeights::uniform(2);
    let mixture = weighted_mixture(&donors, &half).unwrap();
    let averaged = quantile_average_synthesis(&donors, &half, DEFAULT_QUANTILE_GRID).unwrap();
    assert_eq!(w1_exact_1d(&mixture, &treated).unwrap().value, 0.0);
    assert_eq!(w1_exact_1d(&averaged, &treated).unwrap().value, 5.0);
    assert!(averaged.flat_points().iter().all(|&x| x == 5.0));
}

#[test]
fn single_donor_quantile_synthesis_is_its_discretization() {
    let donor = EmpiricalMeasure::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = quantile_average_synthesis(&[donor], &SimplexWeights::uniform(1), 16).unwrap();
    let mut atoms = out.flat_points().to_vec();
    atoms.sort_by(f64::total_cmp);
    let expected: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().flat_map(|&v| [v; 4]).collect();
    assert_eq!(atoms, expected);
}

#[test]
fn quantile_average_of_poisson_donors_is_unimodal() {
    let mut rng = stream(31, &[]);
    let mut cell = |rate: f64| {
        let v: Vec<f64> = (0..20_000).map(|_| poisson_inversion(rate, &mut rng) as f64).collect();
        EmpiricalMeasure::from_values(&v).unwrap()
    };
    let donors = vec![cell(2.0), cell(25.0)];
    let averaged = quantile_average_synthesis(&donors, &SimplexWeights::uniform(2), DEFAULT_QUANTILE_GRID).unwrap();
    // atoms sit on the half-integer lattice
    let modes = detect_modes(&averaged).unwrap();
    assert_eq!(modes.len(), 1, "modes {modes:?}");
    assert!((modes[0] as f64 - 13.5).abs() <= 1.5, "mode {}", modes[0]);
    assert!((averaged.mean()[0] - 13.5).abs() < 0.3, "mean {}", averaged.mean()[0]);
}

#[test]
fn benchmarks_reject_multivariate_cells() {
    let mut rng = stream(5, &[]);
    let mut cell = || {
        let rows: Vec<[f64; 2]> = (0..10).map(|_| [rng.random(), rng.random()]).collect();
        EmpiricalMeasure::from_samples(&rows).unwrap()
    };
    let treated = cell();
    let donors = vec![cell(), cell()];
    let r = cdf_l2_estimate(&treated, &donors, 2, &mut stream(0, &[]));
    assert!(matches!(r, Err(Error::NotOneDimensional(_))), "{r:?}");
    let r = quantile_w2_estimate(&treated, &donors, 64, 2, &mut stream(0, &[]));
    assert!(matches!(r, Err(Error::NotOneDimensional(_))), "{r:?}");
    let r = quantile_average_synthesis(&donors, &SimplexWeights::uniform(2), 64);
    assert!(matches!(r, Err(Error::NotOneDimensional(_))), "{r:?}");
}

#[test]
fn quantile_grid_must_be_large_enough() {
    let (treated, donors) = two_point_case();
    assert!(quantile_w2_problem(&treated, &donors, 15).is_err());
    assert!(quantile_w2_problem(&treated, &donors, 16).is_ok());
}
