//! Adversarial fits on the bimodal Poisson and bivariate Gaussian designs.
//!
//! `cargo run --release --example bimodal_and_multivariate`

use distsynth::estimator::{estimate, synthesize_counterfactual, EstimatorConfig};
use distsynth::ot::w1_exact_lp;
use distsynth::rng::stream;
use distsynth::simlab::{detect_modes, generate, DgpSpec, Scenario};
use distsynth::EmpiricalMeasure;

fn first_atoms(m: &EmpiricalMeasure, n: usize) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform_flat(m.dim(), m.flat_points()[..n * m.dim()].to_vec()).unwrap()
}

fn main() -> distsynth::Result<()> {
    let config = EstimatorConfig::default();

    let bimodal = DgpSpec {
        n_micro: 500,
        t0: 1,
        seed: 1,
        ..DgpSpec::new(Scenario::BimodalPoisson)
    };
    let draw = generate(&bimodal, &mut stream(bimodal.seed, &[]))?;
    let report = estimate(&draw.panel, &config)?;
    let synth = synthesize_counterfactual(&draw.panel, &report.aggregated, 0)?;
    println!("bimodal weights {:.3?}", report.aggregated.values());
    println!("  treated modes {:?}, synthetic modes {:?}", detect_modes(draw.panel.treated(0))?, detect_modes(&synth)?);

    let multi = DgpSpec {
        n_micro: 400,
        t0: 1,
        seed: 2,
        ..DgpSpec::new(Scenario::Multivariate)
    };
    let draw = generate(&multi, &mut stream(multi.seed, &[]))?;
    let report = estimate(&draw.panel, &config)?;
    println!("bivariate weights {:.3?} (true {:.3?})", report.aggregated.values(), multi.lambda_true.values());
    let synth = synthesize_counterfactual(&draw.panel, &report.aggregated, 0)?;
    // the LP oracle is exact but cubic; compare small prefixes
    let w1 = w1_exact_lp(&first_atoms(&synth, 64), &first_atoms(draw.panel.treated(0), 64), 128)?.value;
    println!("  64-atom W1 between synthetic and treated {w1:.3}");
    Ok(())
}
