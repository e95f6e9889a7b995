use distsynth::measures::{sample_mixture, weighted_mixture};
use distsynth::rng::stream;
use distsynth::{EmpiricalMeasure, SimplexWeights};
use proptest::prelude::*;

fn values(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, 1..max_len)
}

fn weights(j: usize) -> impl Strategy<Value = SimplexWeights> {
    prop::collection::vec(0.0..1.0f64, j).prop_filter_map("positive mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| SimplexWeights::normalized(v).unwrap())
    })
}

proptest! {
    #[test]
    fn mixture_keeps_unit_mass(a in values(20), b in values(20), c in values(20), l in weights(3)) {
        let donors = vec![
            EmpiricalMeasure::from_values(&a).unwrap(),
            EmpiricalMeasure::from_values(&b).unwrap(),
            EmpiricalMeasure::from_values(&c).unwrap(),
        ];
        let m = weighted_mixture(&donors, &l).unwrap();
        let total: f64 = m.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(m.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn mixture_mean_is_weighted_mean(a in values(20), b in values(20), l in weights(2)) {
        let da = EmpiricalMeasure::from_values(&a).unwrap();
        let db = EmpiricalMeasure::from_values(&b).unwrap();
        let expected = l[0] * da.mean()[0] + l[1] * db.mean()[0];
        let m = weighted_mixture(&[da, db], &l).unwrap();
        prop_assert!((m.mean()[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn cdf_quantile_galois(v in values(40), tau in 0.001..0.999f64, x in -60.0..60.0f64) {
        let m = EmpiricalMeasure::from_values(&v).unwrap();
        let q = m.quantile(tau).unwrap();
        // Q(tau) <= x  iff  tau <= F(x)
        let f = m.cdf(x).unwrap();
        prop_assert_eq!(q <= x, tau <= f + 1e-12);
        prop_assert!(m.cdf(q).unwrap() + 1e-12 >= tau);
    }

    #[test]
    fn cdf_is_monotone_right_continuous(v in values(30), x in -60.0..60.0f64, h in 0.0..10.0f64) {
        let m = EmpiricalMeasure::from_values(&v).unwrap();
        prop_assert!(m.cdf(x).unwrap() <= m.cdf(x + h).unwrap() + 1e-15);
        prop_assert_eq!(m.cdf(-1e9).unwrap(), 0.0);
        prop_assert!((m.cdf(1e9).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_average_stays_on_simplex(a in weights(4), b in weights(4), c in weights(4), w in weights(3)) {
        let avg = SimplexWeights::average(&[a, b, c], w.values()).unwrap();
        prop_assert!((avg.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(avg.values().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn mixture_sampling_frequencies() {
    let donors = vec![
        EmpiricalMeasure::dirac(&[0.0]).unwrap(),
        EmpiricalMeasure::dirac(&[1.0]).unwrap(),
        EmpiricalMeasure::dirac(&[2.0]).unwrap(),
    ];
    let l = SimplexWeights::new(vec![0.2, 0.0, 0.8]).unwrap();
    let mut rng = stream(3, &[]);
    let draws = sample_mixture(&donors, &l, 20_000, &mut rng).unwrap();
    let twos = draws.iter().filter(|d| d[0] == 2.0).count() as f64 / 20_000.0;
    assert!(draws.iter().all(|d| d[0] != 1.0), "zero-weight donor sampled");
    assert!((twos - 0.8).abs() < 0.02, "share {twos}");
}

#[test]
fn weighted_atoms_round_trip_through_quantiles() {
    let m = EmpiricalMeasure::weighted_flat(1, vec![3.0, 1.0, 2.0], vec![0.5, 0.25, 0.25]).unwrap();
    assert_eq!(m.quantile(0.25).unwrap(), 1.0);
    assert_eq!(m.quantile(0.26).unwrap(), 2.0);
    assert_eq!(m.quantile(0.5).unwrap(), 2.0);
    assert_eq!(m.quantile(0.51).unwrap(), 3.0);
    assert!(m.quantile(0.0).is_err());
    assert!(m.quantile(1.0).is_err());
}
