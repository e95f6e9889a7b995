mod common;

use common::{assert_on_simplex, normal_cell, panel};
use distsynth::estimator::{
    estimate, estimate_cells, fit_critic, fit_method, synthesize_counterfactual, EstimatorConfig, Method,
};
use distsynth::measures::weighted_mixture;
use distsynth::ot::w1_exact_1d;
use distsynth::rng::stream;
use distsynth::simlab::{generate, DgpSpec, Scenario};
use distsynth::{EmpiricalMeasure, SimplexWeights};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

fn quick_config() -> EstimatorConfig {
    EstimatorConfig {
        max_outer_iters: 40,
        ..EstimatorConfig::default()
    }
}

fn small_sim_panel(t0: usize, n: usize, seed: u64) -> distsynth::PanelDataset {
    let spec = DgpSpec {
        n_micro: n,
        t0,
        seed,
        ..DgpSpec::new(Scenario::Contamination)
    };
    generate(&spec, &mut stream(seed, &[])).unwrap().panel
}

#[test]
fn exact_match_donor_dominates() {
    let mut rng = stream(11, &[]);
    let treated = normal_cell(&mut rng, 200, 0.0, 1.0);
    let donors = vec![
        normal_cell(&mut rng, 200, 10.0, 1.0),
        treated.clone(),
        normal_cell(&mut rng, 200, 10.0, 1.0),
        normal_cell(&mut rng, 200, 10.0, 1.0),
    ];
    let config = EstimatorConfig {
        eta: 1e-3,
        ..EstimatorConfig::default()
    };
    let (lam, _) = estimate_cells(&treated, &donors, &config, &mut stream(1, &[])).unwrap();
    assert!(lam[1] > 0.9, "weights {:?}", lam.values());
}

#[test]
fn identical_donors_share_the_mass() {
    let mut rng = stream(12, &[]);
    let treated = normal_cell(&mut rng, 200, 0.0, 1.0);
    let donors = vec![treated.clone(), treated.clone()];
    let (lam, _) = estimate_cells(&treated, &donors, &EstimatorConfig::default(), &mut stream(2, &[])).unwrap();
    assert!((lam[0] - lam[1]).abs() < 0.05, "weights {:?}", lam.values());
}

#[test]
fn clean_design_recovers_the_true_mixture() {
    let spec = DgpSpec {
        seed: 5,
        ..DgpSpec::new(Scenario::Contamination)
    };
    let draw = generate(&spec, &mut stream(5, &[])).unwrap();
    let truth = draw.lambda_true.unwrap();
    let config = EstimatorConfig {
        seed: 5,
        ..EstimatorConfig::default()
    };
    let report = estimate(&draw.panel, &config).unwrap();
    assert_eq!(report.per_period_weights.len(), 3);
    for (t, w) in report.per_period_weights.iter().enumerate() {
        let rmse = w.rmse(&truth);
        assert!(rmse <= 0.12, "period {t}: rmse {rmse} for {:?}", w.values());
    }
}

#[test]
fn aggregation_is_the_temporal_average() {
    let panel = small_sim_panel(3, 60, 3);
    let config = EstimatorConfig {
        temporal_weights: Some(vec![0.5, 0.3, 0.2]),
        ..quick_config()
    };
    let report = estimate(&panel, &config).unwrap();
    assert_eq!(report.per_period_weights.len(), 3);
    for j in 0..4 {
        let expected: f64 = report.per_period_weights.iter().zip([0.5, 0.3, 0.2]).map(|(w, c)| c * w[j]).sum();
        assert!((report.aggregated[j] - expected).abs() < 1e-9);
    }
    for w in report.per_period_weights.iter().chain([&report.aggregated]) {
        assert_on_simplex(w.values());
    }
}

#[test]
fn single_period_aggregation_is_the_period_fit() {
    let panel = small_sim_panel(1, 60, 4);
    let report = estimate(&panel, &quick_config()).unwrap();
    assert_eq!(report.per_period_weights.len(), 1);
    assert_eq!(report.aggregated, report.per_period_weights[0]);
}

#[test]
fn identical_periods_agree_within_monte_carlo_spread() {
    let mut rng = stream(21, &[]);
    let row = |rng: &mut distsynth::rng::SimRng, mean: f64| normal_cell(rng, 80, mean, 1.0);
    let cells: Vec<EmpiricalMeasure> = vec![row(&mut rng, 0.5), row(&mut rng, -1.0), row(&mut rng, 0.0), row(&mut rng, 2.0)];
    let config = quick_config();

    // spread of repeated fits of one cell under different seeds
    let reference: Vec<SimplexWeights> = (0..5)
        .map(|s| estimate_cells(&cells[0], &cells[1..], &config, &mut stream(100 + s, &[])).unwrap().0)
        .collect();
    let spread = (0..3)
        .map(|j| {
            let v: Vec<f64> = reference.iter().map(|w| w[j]).collect();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        })
        .fold(0.0_f64, f64::max);

    let per_unit: Vec<Vec<EmpiricalMeasure>> = cells.iter().map(|c| vec![c.clone(); 4]).collect();
    let report = estimate(&panel(per_unit, 3), &config).unwrap();
    let w = &report.per_period_weights;
    for a in 0..3 {
        for b in 0..a {
            for j in 0..3 {
                let d = (w[a][j] - w[b][j]).abs();
                assert!(d <= 2.0 * spread + 1e-12, "periods {a},{b} donor {j}: {d} vs spread {spread}");
            }
        }
        for j in 0..3 {
            assert!((w[a][j] - report.aggregated[j]).abs() <= 2.0 * spread + 1e-12);
        }
    }
}

#[test]
fn estimation_is_deterministic() {
    let panel = small_sim_panel(2, 50, 6);
    let config = EstimatorConfig {
        max_outer_iters: 25,
        seed: 77,
        ..EstimatorConfig::default()
    };
    let a = estimate(&panel, &config).unwrap();
    let b = estimate(&panel, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let other = estimate(&panel, &EstimatorConfig { seed: 78, ..config }).unwrap();
    assert_ne!(a.per_period_weights, other.per_period_weights);
}

#[test]
fn strong_entropy_pulls_to_uniform() {
    let mut rng = stream(13, &[]);
    let treated = normal_cell(&mut rng, 150, 1.5, 1.0);
    let donors: Vec<EmpiricalMeasure> = [-1.0, 0.0, 1.0, 2.0].iter().map(|&m| normal_cell(&mut rng, 150, m, 1.0)).collect();
    let config = EstimatorConfig {
        eta: 100.0,
        alpha_lambda: 0.01,
        max_outer_iters: 60,
        ..EstimatorConfig::default()
    };
    let (lam, _) = estimate_cells(&treated, &donors, &config, &mut stream(3, &[])).unwrap();
    for &v in lam.values() {
        assert!((v - 0.25).abs() < 1e-2, "weights {:?}", lam.values());
    }
}

#[test]
fn donor_scores_match_the_exact_subgradient() {
    let mut rng = stream(14, &[]);
    let treated = normal_cell(&mut rng, 200, 0.3, 1.2);
    let donors: Vec<EmpiricalMeasure> = [(-2.0, 1.0), (-0.5, 1.0), (1.0, 1.0), (3.0, 1.5)]
        .iter()
        .map(|&(m, s)| normal_cell(&mut rng, 200, m, s))
        .collect();
    let config = EstimatorConfig::default();
    let objective = |lam: &[f64]| {
        let l = SimplexWeights::normalized(lam.to_vec()).unwrap();
        w1_exact_1d(&weighted_mixture(&donors, &l).unwrap(), &treated).unwrap().value
    };

    let mut probes = stream(15, &[]);
    let mut agree = 0;
    for k in 0..20 {
        // interior point: half Dirichlet(1), half uniform
        let e: Vec<f64> = (0..4).map(|_| Exp1.sample(&mut probes)).collect();
        let total: f64 = e.iter().sum();
        let lam: Vec<f64> = e.iter().map(|v| 0.5 * v / total + 0.125).collect();
        let a = probes.random_range(0..4);
        let b = (a + probes.random_range(1..4)) % 4;

        let weights = SimplexWeights::normalized(lam.clone()).unwrap();
        let (net, _) = fit_critic(&treated, &donors, &weights, &config, 2000, &mut stream(16, &[k])).unwrap();
        let score = |j: usize| -net.mean_output(&donors[j]).unwrap();

        let h = 1e-4;
        let mut up = lam.clone();
        let mut down = lam.clone();
        up[a] += h;
        up[b] -= h;
        down[a] -= h;
        down[b] += h;
        let fd = (objective(&up) - objective(&down)) / (2.0 * h);
        let diff = score(a) - score(b);
        if diff.signum() == fd.signum() {
            agree += 1;
        } else {
            eprintln!("probe {k}: g_a - g_b = {diff:.4}, finite difference {fd:.4}");
        }
    }
    assert!(agree >= 18, "{agree}/20 probes agree in sign");
}

#[test]
fn vertex_weights_reproduce_the_donor() {
    let panel = small_sim_panel(1, 40, 7);
    for j in 0..4 {
        let synth = synthesize_counterfactual(&panel, &SimplexWeights::vertex(4, j), 1).unwrap();
        assert_eq!(&synth, panel.cell(j + 1, 1));
    }
    assert!(synthesize_counterfactual(&panel, &SimplexWeights::uniform(4), 2).is_err());
}

#[test]
fn true_mixture_synthesis_converges() {
    let distance = |n: usize| {
        let spec = DgpSpec {
            n_micro: n,
            t0: 1,
            seed: 8,
            ..DgpSpec::new(Scenario::Contamination)
        };
        let draw = generate(&spec, &mut stream(8, &[])).unwrap();
        let synth = synthesize_counterfactual(&draw.panel, &draw.lambda_true.unwrap(), 0).unwrap();
        w1_exact_1d(&synth, draw.panel.treated(0)).unwrap().value
    };
    let d: Vec<f64> = [100, 1000, 5000].iter().map(|&n| distance(n)).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "distances {d:?}");
}

#[test]
fn bimodal_weights_span_both_clusters() {
    let spec = DgpSpec {
        t0: 1,
        seed: 9,
        ..DgpSpec::new(Scenario::BimodalPoisson)
    };
    let draw = generate(&spec, &mut stream(9, &[])).unwrap();
    let fit = fit_method(&draw.panel, Method::Wgan, &EstimatorConfig::default()).unwrap();
    let synth = synthesize_counterfactual(&draw.panel, &fit.aggregated, 0).unwrap();
    let low: f64 = synth.points().zip(synth.weights()).filter(|(x, _)| x[0] <= 8.0).map(|(_, w)| w).sum();
    let high: f64 = synth.points().zip(synth.weights()).filter(|(x, _)| x[0] >= 15.0).map(|(_, w)| w).sum();
    assert!(low > 0.1 && high > 0.1, "mass below 8: {low}, above 15: {high}");
}

#[test]
fn benchmarks_share_the_panel_interface() {
    let panel = small_sim_panel(2, 80, 10);
    for method in [Method::Cdfl2, Method::W2quantile] {
        let fit = fit_method(&panel, method, &EstimatorConfig::default()).unwrap();
        assert_eq!(fit.method, method);
        assert_eq!(fit.per_period_weights.len(), 2);
        assert_on_simplex(fit.aggregated.values());
    }
}
