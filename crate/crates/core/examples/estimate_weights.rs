//! Fits distributional synthetic control weights on a simulated
//! contamination panel and prints the per-period and aggregated weights.
//!
//! `cargo run --release --example estimate_weights`

use distsynth::estimator::{estimate, synthesize_counterfactual, EstimatorConfig};
use distsynth::ot::w1_exact_1d;
use distsynth::rng::stream;
use distsynth::simlab::{generate, DgpSpec, Scenario};

fn main() -> distsynth::Result<()> {
    let spec = DgpSpec {
        epsilon: 0.04,
        n_micro: 200,
        seed: 11,
        ..DgpSpec::new(Scenario::Contamination)
    };
    let draw = generate(&spec, &mut stream(spec.seed, &[]))?;
    let config = EstimatorConfig {
        seed: 11,
        ..EstimatorConfig::default()
    };
    let report = estimate(&draw.panel, &config)?;

    println!("true      {:.3?}", spec.lambda_true.values());
    for (t, w) in report.per_period_weights.iter().enumerate() {
        let trace = report.loss_traces[t].last().expect("at least one iteration");
        println!(
            "{}        {:.3?}  iterations {:>3}  transport {:.4}",
            report.periods[t],
            w.values(),
            report.iterations_used[t],
            trace.transport_estimate
        );
    }
    println!("aggregate {:.3?}", report.aggregated.values());

    let post = draw.panel.cutoff();
    let synth = synthesize_counterfactual(&draw.panel, &report.aggregated, post)?;
    let gap = w1_exact_1d(&synth, draw.panel.treated(post))?.value;
    println!("post-period W1 between treated and synthetic: {gap:.4}");
    Ok(())
}
