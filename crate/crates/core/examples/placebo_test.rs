//! Placebo permutation test on a null panel, then on the same panel with a
//! post-period shift added to the treated unit.
//!
//! `cargo run --release --example placebo_test`

use distsynth::estimator::{EstimatorConfig, Method};
use distsynth::inference::{placebo_with_method, PlaceboOptions};
use distsynth::rng::stream;
use distsynth::simlab::{dgp_exchangeable_null, DgpSpec, Scenario};

fn main() -> distsynth::Result<()> {
    let spec = DgpSpec {
        n_micro: 300,
        seed: 4,
        ..DgpSpec::new(Scenario::Contamination)
    };
    let panel = dgp_exchangeable_null(&spec, &mut stream(spec.seed, &[]))?;
    let config = EstimatorConfig::default();

    let post = panel.cutoff();
    for shift in [0.0, 1.0] {
        let cell = panel.treated(post).map_points(|x| x + shift)?;
        let shifted = panel.with_cell(0, post, cell)?;
        let result = placebo_with_method(&shifted, Method::Cdfl2, &config, PlaceboOptions::default())?;
        println!("shift {shift}: p = {:.1}", result.p_value);
        for (unit, s) in result.units.iter().zip(&result.statistics) {
            println!("  {unit:<6} {s:.4}");
        }
    }
    Ok(())
}
