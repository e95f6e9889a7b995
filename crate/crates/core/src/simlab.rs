//! Simulation designs and the Monte Carlo harness.
//!
//! Four scenarios:
//!
//! * `contamination`: factor-model donors `y = alpha_t + mu_j F_t + sigma e`
//!   with `alpha_t = 0.1 t`; the treated cell is the `lambda_true` mixture at
//!   the micro level with a fixed share `epsilon` of atoms replaced by
//!   `N(mu_out, sigma_out^2)` outliers.
//! * `support_gap`: one latent `Z ~ N(0, 1)` per draw index, shared by all
//!   units; the treated atom is `0.5 tanh Z` and every donor atom is
//!   `sign(Z) max(|Z|, gamma)`.
//! * `bimodal_poisson`: treated `0.5 Poisson(5) + 0.5 Poisson(20)`, donors
//!   Poisson with intensities 2, 12, 18 and 25.
//! * `multivariate`: bivariate Gaussian donors centred on the corners of
//!   `{-3, 3}^2` with unit variances and correlation 0.5; the treated cell is
//!   the `lambda_true` mixture.
//!
//! Mixture cells use per-donor counts `round(lambda_j N)` with a
//! largest-remainder correction so they hold exactly `N` atoms.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::benchmarks::quantile_average_synthesis;
use crate::error::{Error, Result};
use crate::estimator::{fit_method, EstimatorConfig, Method};
use crate::exec::par_map;
use crate::measures::{weighted_mixture, EmpiricalMeasure, PanelDataset, SimplexWeights};
use crate::ot::{w1_exact_1d, w2_exact_1d};
use crate::rng::{derive_seed, stream, SimRng};

pub const BIMODAL_TREATED_INTENSITIES: [f64; 2] = [5.0, 20.0];
pub const BIMODAL_DONOR_INTENSITIES: [f64; 4] = [2.0, 12.0, 18.0, 25.0];
pub const MULTIVARIATE_CORNERS: [[f64; 2]; 4] = [[-3.0, -3.0], [3.0, -3.0], [-3.0, 3.0], [3.0, 3.0]];
pub const MULTIVARIATE_RHO: f64 = 0.5;
/// Default outlier shift above the clean treated mean.
pub const OUTLIER_SHIFT: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Contamination,
    #[serde(alias = "support")]
    SupportGap,
    #[serde(alias = "bimodal")]
    BimodalPoisson,
    Multivariate,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Contamination => "contamination",
            Scenario::SupportGap => "support_gap",
            Scenario::BimodalPoisson => "bimodal_poisson",
            Scenario::Multivariate => "multivariate",
        }
    }

    /// Methods that apply to the scenario, in report order.
    pub fn default_methods(self) -> Vec<Method> {
        match self {
            Scenario::Contamination => vec![Method::Wgan, Method::Cdfl2, Method::W2quantile],
            Scenario::SupportGap => vec![Method::Wgan, Method::Cdfl2],
            Scenario::BimodalPoisson => vec![Method::Wgan, Method::W2quantile],
            Scenario::Multivariate => vec![Method::Wgan],
        }
    }

    /// Whether the design has a ground-truth weight vector.
    pub fn has_truth(self) -> bool {
        matches!(self, Scenario::Contamination | Scenario::Multivariate)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contamination" => Ok(Scenario::Contamination),
            "support" | "support_gap" => Ok(Scenario::SupportGap),
            "bimodal" | "bimodal_poisson" => Ok(Scenario::BimodalPoisson),
            "multivariate" => Ok(Scenario::Multivariate),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario `{other}` (expected contamination, support, bimodal or multivariate)"
            ))),
        }
    }
}

/// Parameters of one simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub scenario: Scenario,
    /// Share of contaminated treated atoms.
    pub epsilon: f64,
    /// Outlier location; `None` means the clean treated sample mean plus 8.
    pub mu_out: Option<f64>,
    pub sigma_out: f64,
    pub gamma: f64,
    pub n_micro: usize,
    pub t0: usize,
    pub t_post: usize,
    pub j_donors: usize,
    pub lambda_true: SimplexWeights,
    /// Idiosyncratic noise scale of the contamination design.
    pub sigma_noise: f64,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            scenario: Scenario::Contamination,
            epsilon: 0.0,
            mu_out: None,
            sigma_out: 10.0,
            gamma: 0.0,
            n_micro: 300,
            t0: 3,
            t_post: 1,
            j_donors: 4,
            lambda_true: SimplexWeights::new(vec![0.15, 0.25, 0.35, 0.25]).expect("valid default"),
            sigma_noise: 1.0,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if self.n_micro < 2 {
            return bad("n_micro must be >= 2".into());
        }
        if self.t0 < 1 || self.t_post < 1 {
            return bad("t0 and t_post must be >= 1".into());
        }
        if self.j_donors < 2 {
            return bad("j_donors must be >= 2".into());
        }
        if !(self.sigma_out.is_finite() && self.sigma_out >= 0.0)
            || !(self.sigma_noise.is_finite() && self.sigma_noise >= 0.0)
        {
            return bad("sigma_out and sigma_noise must be finite and >= 0".into());
        }
        if self.mu_out.is_some_and(|m| !m.is_finite()) {
            return bad("mu_out must be finite".into());
        }
        let fixed_pool = matches!(self.scenario, Scenario::BimodalPoisson | Scenario::Multivariate);
        if fixed_pool && self.j_donors != 4 {
            return bad(format!("scenario {} has exactly 4 donors", self.scenario.name()));
        }
        if self.scenario.has_truth() && self.lambda_true.len() != self.j_donors {
            return bad(format!(
                "lambda_true has {} entries for {} donors",
                self.lambda_true.len(),
                self.j_donors
            ));
        }
        Ok(())
    }

    fn period_labels(&self) -> Vec<String> {
        (1..=self.t0 + self.t_post).map(|t| format!("t{t}")).collect()
    }

    fn unit_labels(&self) -> Vec<String> {
        std::iter::once("treated".to_string())
            .chain((1..=self.j_donors).map(|j| format!("donor{j}")))
            .collect()
    }
}

/// One simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDraw {
    pub panel: PanelDataset,
    pub lambda_true: Option<SimplexWeights>,
    /// Treated cells before contamination (contamination design only).
    pub clean_treated: Option<Vec<EmpiricalMeasure>>,
}

/// Per-donor atom counts `round(lambda_j n)` adjusted by largest remainder to
/// sum to `n`.
pub fn mixture_counts(lambda: &SimplexWeights, n: usize) -> Vec<usize> {
    let raw: Vec<f64> = lambda.values().iter().map(|l| l * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &j in order.iter().cycle() {
        if assigned >= n {
            break;
        }
        counts[j] += 1;
        assigned += 1;
    }
    counts
}

/// Poisson draw by sequential search on the CDF.
pub fn poisson_inversion<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

/// Bivariate normal with the given mean, unit variances and correlation `rho`.
pub fn bivariate_normal<R: Rng + ?Sized>(mean: [f64; 2], rho: f64, rng: &mut R) -> [f64; 2] {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    // lower Cholesky factor of [[1, rho], [rho, 1]]
    let c = (1.0 - rho * rho).sqrt();
    [mean[0] + z1, mean[1] + rho * z1 + c * z2]
}

fn seed_from(rng: &mut SimRng) -> u64 {
    rng.random()
}

/// Contamination design. Outlier positions and values come from their own
/// stream, so for a fixed seed the clean cells do not depend on `epsilon`
/// and a larger `epsilon` replaces a superset of atoms.
pub fn dgp_contamination(spec: &DgpSpec, rng: &mut SimRng) -> Result<SimDraw> {
    spec.validate()?;
    let base = seed_from(rng);
    let n = spec.n_micro;
    let periods = spec.t0 + spec.t_post;
    let mut setup = stream(base, &[0]);
    let loadings: Vec<f64> = {
        let u = Uniform::new(0.0, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        (0..spec.j_donors).map(|_| u.sample(&mut setup)).collect()
    };
    let factors: Vec<f64> = (0..periods).map(|_| StandardNormal.sample(&mut setup)).collect();
    let counts = mixture_counts(&spec.lambda_true, n);
    let k_out = (spec.epsilon * n as f64).round() as usize;

    let mut cells: Vec<Vec<EmpiricalMeasure>> = vec![Vec::with_capacity(periods); spec.j_donors + 1];
    let mut clean = Vec::with_capacity(periods);
    for t in 0..periods {
        let alpha = 0.1 * (t + 1) as f64;
        let mut r = stream(base, &[1, t as u64]);
        let draw = |j: usize, r: &mut SimRng| {
            let e: f64 = StandardNormal.sample(r);
            alpha + loadings[j] * factors[t] + spec.sigma_noise * e
        };
        for j in 0..spec.j_donors {
            let v: Vec<f64> = (0..n).map(|_| draw(j, &mut r)).collect();
            cells[j + 1].push(EmpiricalMeasure::from_values(&v)?);
        }
        let mut treated = Vec::with_capacity(n);
        for (j, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                treated.push(draw(j, &mut r));
            }
        }
        clean.push(EmpiricalMeasure::from_values(&treated)?);

        let mut rc = stream(base, &[2, t as u64]);
        let positions = sample_indices(&mut rc, n, n).into_vec();
        let mu_out = spec
            .mu_out
            .unwrap_or_else(|| treated.iter().sum::<f64>() / n as f64 + OUTLIER_SHIFT);
        let outlier = Normal::new(mu_out, spec.sigma_out).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for &pos in positions.iter().take(k_out) {
            treated[pos] = outlier.sample(&mut rc);
        }
        cells[0].push(EmpiricalMeasure::from_values(&treated)?);
    }
    let panel = PanelDataset::new(spec.unit_labels(), spec.period_labels(), spec.t0, cells)?;
    Ok(SimDraw {
        panel,
        lambda_true: Some(spec.lambda_true.clone()),
        clean_treated: Some(clean),
    })
}

/// Support-gap design.
pub fn dgp_support_gap(spec: &DgpSpec, rng: &mut SimRng) -> Result<SimDraw> {
    spec.validate()?;
    let base = seed_from(rng);
    let periods = spec.t0 + spec.t_post;
    let mut cells: Vec<Vec<EmpiricalMeasure>> = vec![Vec::with_capacity(periods); spec.j_donors + 1];
    for t in 0..periods {
        let mut r = stream(base, &[t as u64]);
        let z: Vec<f64> = (0..spec.n_micro).map(|_| StandardNormal.sample(&mut r)).collect();
        let treated: Vec<f64> = z.iter().map(|z| 0.5 * z.tanh()).collect();
        let donor: Vec<f64> = z.iter().map(|z| z.signum() * z.abs().max(spec.gamma)).collect();
        cells[0].push(EmpiricalMeasure::from_values(&treated)?);
        for row in cells.iter_mut().skip(1) {
            row.push(EmpiricalMeasure::from_values(&donor)?);
        }
    }
    let panel = PanelDataset::new(spec.unit_labels(), spec.period_labels(), spec.t0, cells)?;
    Ok(SimDraw {
        panel,
        lambda_true: None,
        clean_treated: None,
    })
}

/// Bimodal Poisson design.
pub fn dgp_bimodal_poisson(spec: &DgpSpec, rng: &mut SimRng) -> Result<SimDraw> {
    spec.validate()?;
    let base = seed_from(rng);
    let n = spec.n_micro;
    let periods = spec.t0 + spec.t_post;
    let half = mixture_counts(&SimplexWeights::uniform(2), n);
    let mut cells: Vec<Vec<EmpiricalMeasure>> = vec![Vec::with_capacity(periods); 5];
    for t in 0..periods {
        let mut r = stream(base, &[t as u64]);
        let mut treated = Vec::with_capacity(n);
        for (rate, &c) in BIMODAL_TREATED_INTENSITIES.iter().zip(&half) {
            treated.extend((0..c).map(|_| poisson_inversion(*rate, &mut r) as f64));
        }
        cells[0].push(EmpiricalMeasure::from_values(&treated)?);
        for (j, rate) in BIMODAL_DONOR_INTENSITIES.iter().enumerate() {
            let v: Vec<f64> = (0..n).map(|_| poisson_inversion(*rate, &mut r) as f64).collect();
            cells[j + 1].push(EmpiricalMeasure::from_values(&v)?);
        }
    }
    let panel = PanelDataset::new(spec.unit_labels(), spec.period_labels(), spec.t0, cells)?;
    Ok(SimDraw {
        panel,
        lambda_true: None,
        clean_treated: None,
    })
}

/// Bivariate Gaussian design.
pub fn dgp_multivariate(spec: &DgpSpec, rng: &mut SimRng) -> Result<SimDraw> {
    spec.validate()?;
    let base = seed_from(rng);
    let n = spec.n_micro;
    let periods = spec.t0 + spec.t_post;
    let counts = mixture_counts(&spec.lambda_true, n);
    let mut cells: Vec<Vec<EmpiricalMeasure>> = vec![Vec::with_capacity(periods); 5];
    for t in 0..periods {
        let mut r = stream(base, &[t as u64]);
        for (j, corner) in MULTIVARIATE_CORNERS.iter().enumerate() {
            let pts: Vec<f64> = (0..n).flat_map(|_| bivariate_normal(*corner, MULTIVARIATE_RHO, &mut r)).collect();
            cells[j + 1].push(EmpiricalMeasure::uniform_flat(2, pts)?);
        }
        let mut pts = Vec::with_capacity(2 * n);
        for (corner, &c) in MULTIVARIATE_CORNERS.iter().zip(&counts) {
            for _ in 0..c {
                pts.extend(bivariate_normal(*corner, MULTIVARIATE_RHO, &mut r));
            }
        }
        cells[0].push(EmpiricalMeasure::uniform_flat(2, pts)?);
    }
    let panel = PanelDataset::new(spec.unit_labels(), spec.period_labels(), spec.t0, cells)?;
    Ok(SimDraw {
        panel,
        lambda_true: Some(spec.lambda_true.clone()),
        clean_treated: None,
    })
}

/// Null design for permutation checks: `j_donors + 1` exchangeable units,
/// each with its own loading drawn from `U[0, 1]`, following the
/// contamination factor model without outliers.
pub fn dgp_exchangeable_null(spec: &DgpSpec, rng: &mut SimRng) -> Result<PanelDataset> {
    spec.validate()?;
    let base = seed_from(rng);
    let periods = spec.t0 + spec.t_post;
    let mut setup = stream(base, &[0]);
    let units = spec.j_donors + 1;
    let loadings: Vec<f64> = (0..units).map(|_| setup.random::<f64>()).collect();
    let factors: Vec<f64> = (0..periods).map(|_| StandardNormal.sample(&mut setup)).collect();
    let mut cells: Vec<Vec<EmpiricalMeasure>> = vec![Vec::with_capacity(periods); units];
    for t in 0..periods {
        let alpha = 0.1 * (t + 1) as f64;
        let mut r = stream(base, &[1, t as u64]);
        for (u, row) in cells.iter_mut().enumerate() {
            let v: Vec<f64> = (0..spec.n_micro)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    alpha + loadings[u] * factors[t] + spec.sigma_noise * e
                })
                .collect();
            row.push(EmpiricalMeasure::from_values(&v)?);
        }
    }
    let labels = (0..units).map(|u| format!("unit{u}")).collect();
    PanelDataset::new(labels, spec.period_labels(), spec.t0, cells)
}

/// Draws a panel for `spec.scenario`.
pub fn generate(spec: &DgpSpec, rng: &mut SimRng) -> Result<SimDraw> {
    match spec.scenario {
        Scenario::Contamination => dgp_contamination(spec, rng),
        Scenario::SupportGap => dgp_support_gap(spec, rng),
        Scenario::BimodalPoisson => dgp_bimodal_poisson(spec, rng),
        Scenario::Multivariate => dgp_multivariate(spec, rng),
    }
}

/// Integer-bin histogram of a 1D measure: `(first_bin, masses)`. Bin `k`
/// covers `[k - 0.5, k + 0.5]`; an atom sitting exactly on an edge is split
/// equally between the two bins it touches.
pub fn integer_histogram(m: &EmpiricalMeasure) -> Result<(i64, Vec<f64>)> {
    let atoms = m.sorted_atoms()?;
    let lo = atoms.first().map(|a| (a.0 + 0.5).ceil() as i64 - 1).ok_or(Error::Empty("measure"))?;
    let hi = atoms.last().map(|a| (a.0 - 0.5).floor() as i64 + 1).unwrap_or(lo);
    let mut mass = vec![0.0; (hi - lo + 1) as usize];
    for &(x, w) in atoms {
        let below = (x - 0.5).floor();
        if below + 0.5 == x {
            // on the edge between bins `below` and `below + 1`
            mass[(below as i64 - lo) as usize] += 0.5 * w;
            mass[(below as i64 + 1 - lo) as usize] += 0.5 * w;
        } else {
            mass[(x.round() as i64 - lo) as usize] += w;
        }
    }
    Ok((lo, mass))
}

/// Local modes of a 1D measure: integer bins whose 3-bin moving average
/// (zero outside the support) is strictly larger than both neighbours.
pub fn detect_modes(m: &EmpiricalMeasure) -> Result<Vec<i64>> {
    let (lo, mass) = integer_histogram(m)?;
    // pad one empty bin each side so edge bins can be modes
    let mut padded = vec![0.0];
    padded.extend(&mass);
    padded.push(0.0);
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= padded.len() {
            0.0
        } else {
            padded[i as usize]
        }
    };
    let smooth: Vec<f64> = (0..padded.len() as isize)
        .map(|i| (at(i - 1) + at(i) + at(i + 1)) / 3.0)
        .collect();
    let mut modes = Vec::new();
    for i in 1..smooth.len() - 1 {
        if smooth[i] > smooth[i - 1] && smooth[i] > smooth[i + 1] {
            modes.push(lo + i as i64 - 1);
        }
    }
    Ok(modes)
}

/// Aggregated and per-period weights of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFit {
    pub replication: usize,
    pub per_period: Vec<SimplexWeights>,
    pub aggregated: SimplexWeights,
    /// Per pre-treatment period distances between the method's synthetic
    /// cell and the treated cell (1D designs only).
    pub w1: Option<Vec<f64>>,
    pub w2: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub message: String,
}

/// One row of the per-period table. `period` is a period label or `agg` for
/// the temporally aggregated weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    pub period: String,
    pub w1_mean: Option<f64>,
    pub w2_mean: Option<f64>,
    pub mean: Vec<f64>,
    /// `mean - lambda_true`; absent without a ground truth.
    pub bias: Option<Vec<f64>>,
    /// Across-replication variance, normalised by the replication count.
    pub var: Vec<f64>,
}

/// Errors of estimated weights against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    /// `sqrt(mean_r mean_j (agg_rj - truth_j)^2)`; the headline figure.
    pub rmse: f64,
    /// `mean_r sqrt(mean_j (agg_rj - truth_j)^2)`.
    pub mean_of_replication_rmse: f64,
    /// Same as `rmse` but over per-period weights.
    pub per_period_rmse: f64,
    pub per_period_mean_of_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub rows: Vec<PeriodRow>,
    pub rmse: Option<RmseSummary>,
    /// Mean across replications of the per-coordinate variance of the
    /// aggregated weights.
    pub average_variance: f64,
    pub successes: usize,
    pub failures: Vec<FailureRecord>,
    pub fits: Vec<ReplicationFit>,
}

impl MethodSummary {
    pub fn aggregate_row(&self) -> &PeriodRow {
        self.rows.last().expect("summary has an aggregate row")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: Method,
    pub seconds_per_run: f64,
}

/// PMF of target and synthetic cells on integer bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmfRow {
    pub value: i64,
    pub target_mass: f64,
    pub wgan_mass: Option<f64>,
    pub w2q_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

/// Monte Carlo output. Everything except `timing` is a deterministic
/// function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub spec: DgpSpec,
    pub n_sim: usize,
    pub replications: Vec<usize>,
    pub lambda_true: Option<SimplexWeights>,
    pub periods: Vec<String>,
    pub methods: Vec<MethodSummary>,
    /// First replication, first period, aggregated weights (1D only).
    pub pmf: Option<Vec<PmfRow>>,
    /// First replication, first period: target atoms and synthetic draws (2D only).
    pub scatter: Option<Vec<ScatterRow>>,
    pub timing: Vec<MethodTiming>,
}

impl McReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// Synthetic cell produced by a method's weights: the donor mixture, or the
/// quantile average for the quantile-W2 benchmark.
pub fn method_synthesis(
    method: Method,
    donors: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    config: &EstimatorConfig,
) -> Result<EmpiricalMeasure> {
    match method {
        Method::W2quantile => quantile_average_synthesis(donors, lambda, config.quantile_grid),
        _ => weighted_mixture(donors, lambda),
    }
}

/// Seed of the design draw for replication `r`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, &[r as u64, 0])
}

/// Seed of method `m`'s fit on replication `r`.
pub fn method_seed(master: u64, r: usize, m: Method) -> u64 {
    let tag = match m {
        Method::Wgan => 1,
        Method::Cdfl2 => 2,
        Method::W2quantile => 3,
    };
    derive_seed(master, &[r as u64, tag])
}

struct RepOutcome {
    fits: Vec<std::result::Result<ReplicationFit, String>>,
    seconds: Vec<f64>,
}

fn run_replication(
    spec: &DgpSpec,
    methods: &[Method],
    config: &EstimatorConfig,
    r: usize,
) -> std::result::Result<(SimDraw, RepOutcome), String> {
    let mut rng = stream(replication_seed(spec.seed, r), &[]);
    let draw = generate(spec, &mut rng).map_err(|e| format!("design draw failed: {e}"))?;
    let mut fits = Vec::with_capacity(methods.len());
    let mut seconds = Vec::with_capacity(methods.len());
    for &m in methods {
        let cfg = EstimatorConfig {
            seed: method_seed(spec.seed, r, m),
            ..config.clone()
        };
        let start = Instant::now();
        let fit = fit_and_measure(&draw.panel, m, &cfg, r).map_err(|e| e.to_string());
        seconds.push(start.elapsed().as_secs_f64());
        fits.push(fit);
    }
    Ok((draw, RepOutcome { fits, seconds }))
}

fn fit_and_measure(panel: &PanelDataset, method: Method, cfg: &EstimatorConfig, r: usize) -> Result<ReplicationFit> {
    let fit = fit_method(panel, method, cfg)?;
    let (w1, w2) = if panel.dim() == 1 {
        let mut w1 = Vec::with_capacity(panel.cutoff());
        let mut w2 = Vec::with_capacity(panel.cutoff());
        for (t, lambda) in fit.per_period_weights.iter().enumerate() {
            let synth = method_synthesis(method, &panel.donors(t), lambda, cfg)?;
            w1.push(w1_exact_1d(&synth, panel.treated(t))?.value);
            w2.push(w2_exact_1d(&synth, panel.treated(t))?.value);
        }
        (Some(w1), Some(w2))
    } else {
        (None, None)
    };
    Ok(ReplicationFit {
        replication: r,
        per_period: fit.per_period_weights,
        aggregated: fit.aggregated,
        w1,
        w2,
    })
}

fn mean_var(samples: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let j = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; j];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; j];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
            *acc += (v - m).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn summarize(
    method: Method,
    fits: Vec<ReplicationFit>,
    failures: Vec<FailureRecord>,
    truth: Option<&SimplexWeights>,
    periods: &[String],
    j: usize,
) -> MethodSummary {
    let mut rows = Vec::with_capacity(periods.len() + 1);
    if fits.is_empty() {
        return MethodSummary {
            method,
            rows,
            rmse: None,
            average_variance: f64::NAN,
            successes: 0,
            failures,
            fits,
        };
    }
    let n = fits.len() as f64;
    let row = |label: String, samples: Vec<&[f64]>, w1: Option<f64>, w2: Option<f64>| {
        let (mean, var) = mean_var(&samples);
        let bias = truth.map(|t| mean.iter().zip(t.values()).map(|(m, t)| m - t).collect());
        PeriodRow {
            period: label,
            w1_mean: w1,
            w2_mean: w2,
            mean,
            bias,
            var,
        }
    };
    for (t, label) in periods.iter().enumerate() {
        let samples: Vec<&[f64]> = fits.iter().map(|f| f.per_period[t].values()).collect();
        let w1 = fits.iter().map(|f| f.w1.as_ref().map(|v| v[t])).sum::<Option<f64>>().map(|s| s / n);
        let w2 = fits.iter().map(|f| f.w2.as_ref().map(|v| v[t])).sum::<Option<f64>>().map(|s| s / n);
        rows.push(row(label.clone(), samples, w1, w2));
    }
    let agg: Vec<&[f64]> = fits.iter().map(|f| f.aggregated.values()).collect();
    rows.push(row("agg".into(), agg, None, None));
    let average_variance = rows.last().map(|r| r.var.iter().sum::<f64>() / j as f64).unwrap_or(f64::NAN);

    let rmse = truth.map(|t| {
        let t = t.values();
        let agg_mse: Vec<f64> = fits.iter().map(|f| mse(f.aggregated.values(), t)).collect();
        let per_mse: Vec<f64> = fits
            .iter()
            .flat_map(|f| f.per_period.iter().map(|w| mse(w.values(), t)))
            .collect();
        RmseSummary {
            rmse: (agg_mse.iter().sum::<f64>() / n).sqrt(),
            mean_of_replication_rmse: agg_mse.iter().map(|m| m.sqrt()).sum::<f64>() / n,
            per_period_rmse: (per_mse.iter().sum::<f64>() / per_mse.len() as f64).sqrt(),
            per_period_mean_of_rmse: per_mse.iter().map(|m| m.sqrt()).sum::<f64>() / per_mse.len() as f64,
        }
    });
    MethodSummary {
        method,
        rows,
        rmse,
        average_variance,
        successes: fits.len(),
        failures,
        fits,
    }
}

fn pmf_table(draw: &SimDraw, methods: &[(Method, SimplexWeights)], config: &EstimatorConfig) -> Result<Vec<PmfRow>> {
    let target = integer_histogram(draw.panel.treated(0))?;
    let donors = draw.panel.donors(0);
    let mut hists = vec![target];
    let mut which = Vec::new();
    for (m, w) in methods {
        if matches!(m, Method::Wgan | Method::W2quantile) {
            hists.push(integer_histogram(&method_synthesis(*m, &donors, w, config)?)?);
            which.push(*m);
        }
    }
    let lo = hists.iter().map(|h| h.0).min().unwrap_or(0);
    let hi = hists.iter().map(|h| h.0 + h.1.len() as i64 - 1).max().unwrap_or(0);
    let mass = |h: &(i64, Vec<f64>), v: i64| -> f64 {
        let i = v - h.0;
        if i < 0 || i as usize >= h.1.len() {
            0.0
        } else {
            h.1[i as usize]
        }
    };
    Ok((lo..=hi)
        .map(|v| {
            let find = |m: Method| which.iter().position(|&w| w == m).map(|k| mass(&hists[k + 1], v));
            PmfRow {
                value: v,
                target_mass: mass(&hists[0], v),
                wgan_mass: find(Method::Wgan),
                w2q_mass: find(Method::W2quantile),
            }
        })
        .collect())
}

fn scatter_rows(draw: &SimDraw, methods: &[(Method, SimplexWeights)], seed: u64) -> Result<Vec<ScatterRow>> {
    const POINTS: usize = 500;
    let mut rows = Vec::new();
    let target = draw.panel.treated(0);
    for p in target.points().take(POINTS) {
        rows.push(ScatterRow {
            series: "target".into(),
            x: p[0],
            y: p[1],
        });
    }
    let donors = draw.panel.donors(0);
    for (m, w) in methods {
        let mut rng = stream(method_seed(seed, usize::MAX, *m), &[]);
        let pts = crate::measures::sample_mixture(&donors, w, POINTS, &mut rng)?;
        rows.extend(pts.into_iter().map(|p| ScatterRow {
            series: m.name().to_string(),
            x: p[0],
            y: p[1],
        }));
    }
    Ok(rows)
}

/// Runs `n_sim` replications of `spec` with every method in `methods`.
pub fn run_monte_carlo(
    spec: &DgpSpec,
    methods: &[Method],
    n_sim: usize,
    config: &EstimatorConfig,
    jobs: usize,
) -> Result<McReport> {
    let reps: Vec<usize> = (0..n_sim).collect();
    run_replications(spec, methods, &reps, config, jobs)
}

/// Like [`run_monte_carlo`] for an explicit list of replication indices.
/// Each replication draws from its own seed, so the list order only affects
/// floating-point summation order in the aggregates.
pub fn run_replications(
    spec: &DgpSpec,
    methods: &[Method],
    replications: &[usize],
    config: &EstimatorConfig,
    jobs: usize,
) -> Result<McReport> {
    spec.validate()?;
    config.validate()?;
    if replications.is_empty() {
        return Err(Error::InvalidConfig("n_sim must be >= 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    if spec.scenario == Scenario::Multivariate && methods.iter().any(|&m| m != Method::Wgan) {
        return Err(Error::NotOneDimensional(2));
    }
    let outcomes = par_map(replications.len(), jobs, |i| run_replication(spec, methods, config, replications[i]));

    let periods: Vec<String> = spec.period_labels()[..spec.t0].to_vec();
    let mut per_method_fits: Vec<Vec<ReplicationFit>> = vec![Vec::new(); methods.len()];
    let mut per_method_fail: Vec<Vec<FailureRecord>> = vec![Vec::new(); methods.len()];
    let mut seconds = vec![(0.0, 0usize); methods.len()];
    let mut first_draw: Option<SimDraw> = None;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let r = replications[i];
        match outcome {
            Err(msg) => {
                for f in per_method_fail.iter_mut() {
                    f.push(FailureRecord {
                        replication: r,
                        message: msg.clone(),
                    });
                }
            }
            Ok((draw, rep)) => {
                for (k, (fit, s)) in rep.fits.into_iter().zip(rep.seconds).enumerate() {
                    seconds[k].0 += s;
                    seconds[k].1 += 1;
                    match fit {
                        Ok(f) => per_method_fits[k].push(f),
                        Err(message) => per_method_fail[k].push(FailureRecord { replication: r, message }),
                    }
                }
                if first_draw.is_none() {
                    first_draw = Some(draw);
                }
            }
        }
    }

    let truth = spec.scenario.has_truth().then(|| spec.lambda_true.clone());
    let first_weights: Vec<(Method, SimplexWeights)> = methods
        .iter()
        .zip(&per_method_fits)
        .filter_map(|(m, fits)| {
            fits.iter()
                .find(|f| f.replication == replications[0])
                .map(|f| (*m, f.aggregated.clone()))
        })
        .collect();
    let (pmf, scatter) = match &first_draw {
        Some(d) if spec.scenario == Scenario::BimodalPoisson => (Some(pmf_table(d, &first_weights, config)?), None),
        Some(d) if d.panel.dim() == 2 => (None, Some(scatter_rows(d, &first_weights, spec.seed)?)),
        _ => (None, None),
    };
    let timing = methods
        .iter()
        .zip(&seconds)
        .map(|(&method, &(s, n))| MethodTiming {
            method,
            seconds_per_run: if n == 0 { 0.0 } else { s / n as f64 },
        })
        .collect();
    let summaries = methods
        .iter()
        .zip(per_method_fits.into_iter().zip(per_method_fail))
        .map(|(&m, (fits, fails))| summarize(m, fits, fails, truth.as_ref(), &periods, spec.j_donors))
        .collect();
    Ok(McReport {
        spec: spec.clone(),
        n_sim: replications.len(),
        replications: replications.to_vec(),
        lambda_true: truth,
        periods,
        methods: summaries,
        pmf,
        scatter,
        timing,
    })
}

/// Table with columns `Period,Method,W2_mean,W1_mean,Bias_l1,Var_l1,...`.
/// Missing values are written as empty fields.
pub fn write_period_table<W: std::io::Write>(writer: W, report: &McReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let j = report.spec.j_donors;
    let mut header = vec!["Period".to_string(), "Method".into(), "W2_mean".into(), "W1_mean".into()];
    for k in 1..=j {
        header.push(format!("Bias_l{k}"));
        header.push(format!("Var_l{k}"));
    }
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for (t, label) in report.periods.iter().chain(std::iter::once(&"agg".to_string())).enumerate() {
        for s in &report.methods {
            let Some(row) = s.rows.get(t) else { continue };
            let mut rec = vec![label.clone(), s.method.name().to_uppercase(), opt(row.w2_mean), opt(row.w1_mean)];
            for k in 0..j {
                rec.push(opt(row.bias.as_ref().map(|b| b[k])));
                rec.push(format!("{:.6}", row.var[k]));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_sum_to_n() {
        let l = SimplexWeights::new(vec![0.15, 0.25, 0.35, 0.25]).unwrap();
        assert_eq!(mixture_counts(&l, 300), vec![45, 75, 105, 75]);
        assert_eq!(mixture_counts(&l, 7).iter().sum::<usize>(), 7);
        let thirds = SimplexWeights::uniform(3);
        assert_eq!(mixture_counts(&thirds, 10), vec![4, 3, 3]);
    }

    #[test]
    fn modes_of_simple_histograms() {
        let m = EmpiricalMeasure::from_values(&[0.0, 1.0, 1.0, 1.0, 2.0, 8.0, 9.0, 9.0, 9.0, 10.0]).unwrap();
        assert_eq!(detect_modes(&m).unwrap(), vec![1, 9]);
        // smoothing turns a point mass into a plateau, which has no strict maximum
        let single = EmpiricalMeasure::dirac(&[4.0]).unwrap();
        assert!(detect_modes(&single).unwrap().is_empty());
        let tri = EmpiricalMeasure::from_values(&[3.0, 4.0, 4.0, 5.0]).unwrap();
        assert_eq!(detect_modes(&tri).unwrap(), vec![4]);
    }

    #[test]
    fn edge_atoms_split_between_bins() {
        let m = EmpiricalMeasure::from_values(&[1.5, 3.0, 2.6]).unwrap();
        let (lo, mass) = integer_histogram(&m).unwrap();
        assert_eq!(lo, 1);
        let third = 1.0 / 3.0;
        let expected = [0.5 * third, 0.5 * third, 2.0 * third];
        for (a, b) in mass.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{mass:?}");
        }
    }

    #[test]
    fn scenario_names_parse() {
        for s in ["contamination", "support", "bimodal", "multivariate"] {
            s.parse::<Scenario>().unwrap();
        }
        assert!("gap".parse::<Scenario>().is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DgpSpec::default().validate().is_ok());
        let bad = DgpSpec { gamma: 1.0, ..DgpSpec::new(Scenario::SupportGap) };
        assert!(bad.validate().is_err());
        let bad = DgpSpec { n_micro: 1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DgpSpec { j_donors: 3, ..DgpSpec::new(Scenario::BimodalPoisson) };
        assert!(bad.validate().is_err());
    }
}
