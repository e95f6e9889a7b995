//! Trains the gradient-penalty critic on two shifted normal samples and
//! compares its transport estimate with the exact distance.
//!
//! `cargo run --release --example train_critic`

use distsynth::estimator::{fit_critic, EstimatorConfig};
use distsynth::ot::w1_exact_1d;
use distsynth::rng::stream;
use distsynth::{EmpiricalMeasure, SimplexWeights};
use rand_distr::{Distribution, StandardNormal};

fn sample(seed: u64, shift: f64) -> EmpiricalMeasure {
    let mut rng = stream(seed, &[]);
    let v: Vec<f64> = (0..500)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            shift + z
        })
        .collect();
    EmpiricalMeasure::from_values(&v).unwrap()
}

fn main() -> distsynth::Result<()> {
    let treated = sample(1, 0.0);
    let donor = sample(2, 1.0);
    let config = EstimatorConfig::default();
    let exact = w1_exact_1d(&treated, &donor)?.value;

    let mut rng = stream(3, &[]);
    for steps in [250, 1000, 4000] {
        let (critic, last) = fit_critic(
            &treated,
            std::slice::from_ref(&donor),
            &SimplexWeights::uniform(1),
            &config,
            steps,
            &mut rng,
        )?;
        let transport = critic.mean_output(&treated)? - critic.mean_output(&donor)?;
        println!(
            "{steps:>5} steps: transport {transport:.4}  penalty {:.4}  (exact W1 {exact:.4})",
            last.penalty_term
        );
    }
    Ok(())
}
