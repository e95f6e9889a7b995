use distsynth::estimator::{EstimatorConfig, Method};
use distsynth::inference::{
    effect_statistic, permutation_p_value, placebo_distribution, placebo_with_method, PlaceboOptions,
};
use distsynth::rng::stream;
use distsynth::simlab::{dgp_exchangeable_null, DgpSpec, Scenario};
use distsynth::{EmpiricalMeasure, Error, PanelDataset, SimplexWeights};
use proptest::prelude::*;
use std::collections::HashMap;

proptest! {
    #[test]
    fn p_values_live_on_the_rank_grid(stats in prop::collection::vec(0.0..5.0f64, 2..12)) {
        let (count, p) = permutation_p_value(&stats).unwrap();
        let n = stats.len();
        prop_assert!((1..=n).contains(&count));
        prop_assert_eq!(p, count as f64 / n as f64);
    }
}

#[test]
fn tied_statistics_give_p_one() {
    assert_eq!(permutation_p_value(&[0.3; 5]).unwrap(), (5, 1.0));
}

#[test]
fn strictly_largest_treated_gives_one_fifth() {
    assert_eq!(permutation_p_value(&[2.0, 0.1, 0.5, 1.9, 0.0]).unwrap(), (1, 0.2));
}

#[test]
fn statistic_is_exact_transport() {
    let a = EmpiricalMeasure::from_values(&[0.0, 1.0, 3.0]).unwrap();
    assert_eq!(effect_statistic(&a, &a).unwrap(), 0.0);
    let shifted = a.map_points(|x| x + 1.5).unwrap();
    assert!((effect_statistic(&a, &shifted).unwrap() - 1.5).abs() < 1e-12);
    let b = EmpiricalMeasure::dirac(&[0.0, 0.0]).unwrap();
    assert!(matches!(effect_statistic(&a, &b), Err(Error::DimensionMismatch { .. })));
}

fn null_panel(seed: u64, n: usize) -> PanelDataset {
    let spec = DgpSpec {
        n_micro: n,
        t0: 2,
        seed,
        ..DgpSpec::new(Scenario::Contamination)
    };
    dgp_exchangeable_null(&spec, &mut stream(seed, &[])).unwrap()
}

fn by_label(result: &distsynth::inference::PlaceboResult) -> HashMap<String, f64> {
    result.units.iter().cloned().zip(result.statistics.iter().copied()).collect()
}

#[test]
fn statistics_do_not_depend_on_the_treated_label() {
    let panel = null_panel(1, 120);
    let config = EstimatorConfig::default();
    let reference = by_label(&placebo_with_method(&panel, Method::Cdfl2, &config, PlaceboOptions::default()).unwrap());
    for u in 1..panel.units().len() {
        let relabeled = panel.with_treated(u);
        let result = placebo_with_method(&relabeled, Method::Cdfl2, &config, PlaceboOptions::default()).unwrap();
        assert_eq!(result.units[0], panel.units()[u]);
        let stats = by_label(&result);
        for (label, s) in &reference {
            assert_eq!(stats[label].to_bits(), s.to_bits(), "unit {label} under relabeling {u}");
        }
    }
}

#[test]
fn post_period_shift_raises_the_treated_statistic() {
    let panel = null_panel(2, 400);
    let config = EstimatorConfig::default();
    let post = panel.cutoff();
    let mut last = -1.0;
    for s in [0.0, 0.5, 1.0, 2.0] {
        let cell = panel.treated(post).map_points(|x| x + s).unwrap();
        let shifted = panel.with_cell(0, post, cell).unwrap();
        let result = placebo_with_method(&shifted, Method::Cdfl2, &config, PlaceboOptions::default()).unwrap();
        assert!(result.statistics[0] >= last, "shift {s}: {} after {last}", result.statistics[0]);
        last = result.statistics[0];
    }
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let panel = null_panel(3, 100);
    let config = EstimatorConfig::default();
    let seq = placebo_with_method(&panel, Method::W2quantile, &config, PlaceboOptions::default()).unwrap();
    let par = placebo_with_method(
        &panel,
        Method::W2quantile,
        &config,
        PlaceboOptions {
            jobs: 3,
            ..PlaceboOptions::default()
        },
    )
    .unwrap();
    assert_eq!(seq, par);
}

#[test]
fn excluded_treated_unit_never_donates() {
    let panel = null_panel(4, 80);
    let options = PlaceboOptions {
        exclude_treated_from_donors: true,
        ..PlaceboOptions::default()
    };
    let result = placebo_with_method(&panel, Method::Cdfl2, &EstimatorConfig::default(), options).unwrap();
    let treated = &panel.units()[0];
    assert!(result.donors[0].iter().all(|d| d != treated));
    for pool in &result.donors[1..] {
        assert!(!pool.contains(treated), "{pool:?}");
        assert_eq!(pool.len(), panel.units().len() - 2);
    }
}

#[test]
fn a_failed_fit_aborts_the_test() {
    let panel = null_panel(5, 50);
    let failing = panel.units()[2].clone();
    let r = placebo_distribution(&panel, 0, PlaceboOptions::default(), |p, _| {
        if p.units()[0] == failing {
            Err(Error::InvalidConfig("boom".into()))
        } else {
            Ok(SimplexWeights::uniform(p.n_donors()))
        }
    });
    match r {
        Err(Error::PlaceboFit { unit, .. }) => assert_eq!(unit, failing),
        other => panic!("expected a placebo failure, got {other:?}"),
    }
}

#[test]
fn too_few_units_are_rejected() {
    let spec = DgpSpec {
        n_micro: 20,
        j_donors: 2,
        lambda_true: SimplexWeights::uniform(2),
        ..DgpSpec::new(Scenario::Contamination)
    };
    let panel = dgp_exchangeable_null(&spec, &mut stream(0, &[])).unwrap();
    assert_eq!(panel.units().len(), 3);
    let options = PlaceboOptions {
        exclude_treated_from_donors: true,
        ..PlaceboOptions::default()
    };
    let r = placebo_with_method(&panel, Method::Cdfl2, &EstimatorConfig::default(), options);
    assert!(matches!(r, Err(Error::InvalidPanel(_))), "{r:?}");
}
