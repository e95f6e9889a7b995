//! A small Monte Carlo study on the contamination design, printed as a
//! per-period table.
//!
//! `cargo run --release --example monte_carlo`

use distsynth::estimator::{EstimatorConfig, Method};
use distsynth::simlab::{run_monte_carlo, write_period_table, DgpSpec, Scenario};

fn main() -> distsynth::Result<()> {
    let spec = DgpSpec {
        epsilon: 0.04,
        n_micro: 150,
        seed: 7,
        ..DgpSpec::new(Scenario::Contamination)
    };
    let config = EstimatorConfig {
        max_outer_iters: 100,
        ..EstimatorConfig::default()
    };
    let methods = [Method::Wgan, Method::Cdfl2, Method::W2quantile];
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let report = run_monte_carlo(&spec, &methods, 4, &config, jobs)?;

    write_period_table(std::io::stdout().lock(), &report)?;
    for s in &report.methods {
        if let Some(r) = s.rmse {
            println!("{:<10} weight rmse {:.4}", s.method.name(), r.rmse);
        }
    }
    Ok(())
}
