//! The entropic mirror-descent update on its own, with fixed donor scores.
//! Iterating the step converges to weights proportional to `exp(-g / eta)`.
//!
//! `cargo run --release --example mirror_descent`

use distsynth::estimator::mirror_descent_step;
use distsynth::SimplexWeights;

fn main() -> distsynth::Result<()> {
    let scores = [0.3, -0.1, 0.0, 0.2];
    let eta = 0.5;
    let mut lambda = SimplexWeights::uniform(scores.len());
    for k in 0..=400 {
        if k % 100 == 0 {
            println!("iteration {k:>3}: {:.4?}", lambda.values());
        }
        lambda = mirror_descent_step(&lambda, &scores, eta, 0.05)?;
    }
    let gibbs: Vec<f64> = scores.iter().map(|g| (-g / eta).exp()).collect();
    let fixed_point = SimplexWeights::normalized(gibbs)?;
    println!("fixed point     {:.4?}", fixed_point.values());
    Ok(())
}
