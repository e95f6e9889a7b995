#![allow(dead_code)]

use distsynth::rng::SimRng;
use distsynth::{EmpiricalMeasure, PanelDataset};
use rand_distr::{Distribution, Normal};

pub fn normal_cell(rng: &mut SimRng, n: usize, mean: f64, sd: f64) -> EmpiricalMeasure {
    let dist = Normal::new(mean, sd).unwrap();
    let v: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    EmpiricalMeasure::from_values(&v).unwrap()
}

/// Panel with units `treated, donor1, ..` and periods `t1, ..`. `cells[u][t]`.
pub fn panel(cells: Vec<Vec<EmpiricalMeasure>>, cutoff: usize) -> PanelDataset {
    let units = std::iter::once("treated".to_string())
        .chain((1..cells.len()).map(|j| format!("donor{j}")))
        .collect();
    let periods = (1..=cells[0].len()).map(|t| format!("t{t}")).collect();
    PanelDataset::new(units, periods, cutoff, cells).unwrap()
}

pub fn assert_on_simplex(w: &[f64]) {
    let total: f64 = w.iter().sum();
    assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    assert!(w.iter().all(|&v| v >= 0.0), "negative weight in {w:?}");
}
