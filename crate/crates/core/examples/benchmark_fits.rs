//! The CDF-L2 and quantile-W2 benchmarks, and the difference between a
//! measure mixture and a quantile average.
//!
//! `cargo run --release --example benchmark_fits`

use distsynth::benchmarks::{cdf_l2_estimate, quantile_average_synthesis, quantile_w2_estimate};
use distsynth::measures::weighted_mixture;
use distsynth::rng::stream;
use distsynth::simlab::{detect_modes, poisson_inversion};
use distsynth::{EmpiricalMeasure, SimplexWeights};

fn poisson_cell(rate: f64, n: usize, seed: u64) -> EmpiricalMeasure {
    let mut rng = stream(seed, &[]);
    let v: Vec<f64> = (0..n).map(|_| poisson_inversion(rate, &mut rng) as f64).collect();
    EmpiricalMeasure::from_values(&v).unwrap()
}

fn main() -> distsynth::Result<()> {
    let donors: Vec<EmpiricalMeasure> =
        [2.0, 12.0, 18.0, 25.0].iter().enumerate().map(|(j, &r)| poisson_cell(r, 4000, j as u64)).collect();
    let mut treated_atoms = poisson_cell(5.0, 2000, 10).flat_points().to_vec();
    treated_atoms.extend_from_slice(poisson_cell(20.0, 2000, 11).flat_points());
    let treated = EmpiricalMeasure::from_values(&treated_atoms)?;

    let cdf = cdf_l2_estimate(&treated, &donors, 10, &mut stream(0, &[]))?;
    let w2 = quantile_w2_estimate(&treated, &donors, 256, 10, &mut stream(0, &[]))?;
    println!("cdf-l2 weights      {:.3?}", cdf.values());
    println!("quantile-w2 weights {:.3?}", w2.values());

    println!("treated modes            {:?}", detect_modes(&treated)?);
    println!("mixture modes (w2 fit)   {:?}", detect_modes(&weighted_mixture(&donors, &w2)?)?);
    let averaged = quantile_average_synthesis(&donors, &w2, 256)?;
    println!("quantile average modes   {:?}", detect_modes(&averaged)?);

    let half = SimplexWeights::uniform(2);
    let pair = [donors[0].clone(), donors[3].clone()];
    println!(
        "equal-weight mixture of Poisson(2) and Poisson(25): modes {:?}; quantile average: modes {:?}",
        detect_modes(&weighted_mixture(&pair, &half)?)?,
        detect_modes(&quantile_average_synthesis(&pair, &half, 256)?)?
    );
    Ok(())
}
