//! Exact transport distances between small empirical measures.
//!
//! `cargo run --release --example oracle_distances`

use distsynth::ot::{cdf_l2_sq, w1_exact_1d, w1_exact_lp, w2_exact_1d, DEFAULT_MAX_ATOMS};
use distsynth::EmpiricalMeasure;

fn main() -> distsynth::Result<()> {
    let p = EmpiricalMeasure::from_values(&[0.0, 1.0, 2.0, 7.0])?;
    let q = EmpiricalMeasure::from_values(&[0.5, 1.5, 4.0])?;

    println!("W1        {:.6}", w1_exact_1d(&p, &q)?.value);
    println!("W1 (LP)   {:.6}", w1_exact_lp(&p, &q, DEFAULT_MAX_ATOMS)?.value);
    println!("W2        {:.6}", w2_exact_1d(&p, &q)?.value);
    println!("CDF L2^2  {:.6}", cdf_l2_sq(&p, &q)?);

    // the LP oracle also handles points in the plane
    let a = EmpiricalMeasure::from_samples(&[[0.0, 0.0], [1.0, 0.0]])?;
    let b = EmpiricalMeasure::from_samples(&[[0.0, 1.0], [1.0, 1.0], [3.0, 1.0]])?;
    println!("2D W1     {:.6}", w1_exact_lp(&a, &b, DEFAULT_MAX_ATOMS)?.value);
    Ok(())
}
