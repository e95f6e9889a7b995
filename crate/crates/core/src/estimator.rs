//! The adversarial distributional synthetic control estimator.
//!
//! For every pre-treatment period the weights solve
//!
//! ```text
//! min_lambda  W1(sum_j lambda_j P_j, P_treated) + eta * sum_j lambda_j log lambda_j
//! ```
//!
//! by alternating `n_critic` Adam ascent steps on a gradient-penalized critic
//! with one entropic mirror-descent step on `lambda`. The donor score fed to
//! mirror descent is `g_j = -E_{P_j}[f]`, the derivative of the transport
//! term with respect to `lambda_j` for a fixed critic. Period estimates are
//! then averaged with the temporal weights.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{self, DEFAULT_QUANTILE_GRID, DEFAULT_RESTARTS};
use crate::critic::{
    adam_step, critic_loss_and_grads, AdamState, CriticArchitecture, CriticLossBreakdown, CriticNetwork, Direction,
    DEFAULT_DEPTH, DEFAULT_LEAKY_SLOPE, DEFAULT_WIDTH,
};
use crate::error::{Error, Result};
use crate::measures::{sample_mixture_flat, weighted_mixture, EmpiricalMeasure, PanelDataset, SimplexWeights};
use crate::rng::{self, SimRng};

/// Weights are floored here before taking logarithms.
pub const LAMBDA_FLOOR: f64 = 1e-12;
/// Number of outer iterations averaged by the stopping rule.
pub const CONVERGENCE_WINDOW: usize = 10;

/// Hyperparameters of the estimator. Field names are the JSON config keys;
/// omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Entropic coefficient on the weights.
    pub eta: f64,
    /// Gradient-penalty coefficient.
    pub zeta: f64,
    pub alpha_theta: f64,
    pub alpha_lambda: f64,
    /// Critic steps per weight step.
    pub n_critic: usize,
    pub max_outer_iters: usize,
    /// Stop once the mean max-abs weight change over the last
    /// [`CONVERGENCE_WINDOW`] outer iterations falls below this.
    pub lambda_tol: f64,
    /// 0 means full batch.
    pub batch_size: usize,
    /// Number of gradient-penalty interpolates; 0 means the treated batch size.
    pub interpolate_batch: usize,
    /// Per-period aggregation weights; `None` means uniform.
    pub temporal_weights: Option<Vec<f64>>,
    pub critic_width: usize,
    pub critic_depth: usize,
    pub leaky_slope: f64,
    /// Start each period's critic with a zero output layer on top of
    /// Glorot-initialised hidden layers.
    pub zero_output_init: bool,
    /// Feed the critic centred and rescaled inputs (see [`InputScaling`]).
    pub standardize_inputs: bool,
    /// Negate the critic whenever its transport estimate is negative.
    pub orientation_check: bool,
    /// Random restarts of the benchmark QP solver.
    pub qp_restarts: usize,
    /// Quantile grid size of the quantile-W2 benchmark.
    pub quantile_grid: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            zeta: 10.0,
            alpha_theta: 1e-3,
            alpha_lambda: 0.05,
            n_critic: 5,
            max_outer_iters: 300,
            lambda_tol: 1e-5,
            batch_size: 0,
            interpolate_batch: 0,
            temporal_weights: None,
            critic_width: DEFAULT_WIDTH,
            critic_depth: DEFAULT_DEPTH,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            zero_output_init: true,
            standardize_inputs: true,
            orientation_check: true,
            qp_restarts: DEFAULT_RESTARTS,
            quantile_grid: DEFAULT_QUANTILE_GRID,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad("eta must be finite and >= 0");
        }
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return bad("zeta must be finite and > 0");
        }
        if !(self.alpha_theta > 0.0 && self.alpha_theta.is_finite()) {
            return bad("alpha_theta must be > 0");
        }
        if !(self.alpha_lambda > 0.0 && self.alpha_lambda.is_finite()) {
            return bad("alpha_lambda must be > 0");
        }
        if self.alpha_lambda * self.eta >= 2.0 {
            // log-weights evolve as u <- (1 - alpha eta) u - alpha g, which diverges past 2
            return bad("alpha_lambda * eta must be < 2 for the mirror step to be stable");
        }
        if self.n_critic == 0 {
            return bad("n_critic must be >= 1");
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be >= 1");
        }
        if !(self.lambda_tol >= 0.0) {
            return bad("lambda_tol must be >= 0");
        }
        if self.critic_width == 0 || self.critic_depth == 0 {
            return bad("critic_width and critic_depth must be >= 1");
        }
        if let Some(w) = &self.temporal_weights {
            SimplexWeights::new(w.clone())
                .map_err(|e| Error::InvalidConfig(format!("temporal_weights: {e}")))?;
        }
        Ok(())
    }

    fn architecture(&self, input_dim: usize) -> CriticArchitecture {
        CriticArchitecture {
            input_dim,
            width: self.critic_width,
            depth: self.critic_depth,
            leaky_slope: self.leaky_slope,
        }
    }

    /// Temporal weights for `t0` periods.
    pub fn temporal_weights_for(&self, t0: usize) -> Result<Vec<f64>> {
        match &self.temporal_weights {
            None => Ok(vec![1.0 / t0 as f64; t0]),
            Some(w) if w.len() == t0 => Ok(w.clone()),
            Some(w) => Err(Error::InvalidConfig(format!(
                "temporal_weights has {} entries for {t0} pre-treatment periods",
                w.len()
            ))),
        }
    }
}

/// One outer iteration of a period fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Penalized critic objective at the last critic step.
    pub critic_objective: f64,
    /// `E_treated[f] - sum_j lambda_j E_j[f]` on the full cells.
    pub transport_estimate: f64,
    /// `transport_estimate + eta * sum_j lambda_j log lambda_j`.
    pub regularized_objective: f64,
    /// Largest absolute weight change of this iteration.
    pub lambda_change: f64,
}

/// Diagnostics of one period fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTrace {
    pub points: Vec<TracePoint>,
    pub iterations: usize,
    pub converged: bool,
    /// Final donor scores `g_j = -E_j[f]`.
    pub final_scores: Vec<f64>,
}

/// Output of [`estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub donors: Vec<String>,
    pub periods: Vec<String>,
    pub per_period_weights: Vec<SimplexWeights>,
    pub aggregated: SimplexWeights,
    pub temporal_weights: Vec<f64>,
    pub loss_traces: Vec<Vec<TracePoint>>,
    pub iterations_used: Vec<usize>,
    pub converged: Vec<bool>,
    pub config: EstimatorConfig,
    pub seed: u64,
}

/// Entropic mirror-descent step
/// `lambda_j <- lambda_j exp(-alpha (g_j + eta (1 + log lambda_j))) / Z`.
///
/// Computed in the log domain; the output is strictly positive.
pub fn mirror_descent_step(
    lambda: &SimplexWeights,
    scores: &[f64],
    eta: f64,
    alpha_lambda: f64,
) -> Result<SimplexWeights> {
    if scores.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: lambda.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("donor scores"));
    }
    let logits: Vec<f64> = lambda
        .values()
        .iter()
        .zip(scores)
        .map(|(&l, &g)| {
            let log_l = l.max(LAMBDA_FLOOR).ln();
            log_l - alpha_lambda * (g + eta * (1.0 + log_l))
        })
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = logits.iter().map(|z| (z - top).exp().max(f64::MIN_POSITIVE)).collect();
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    SimplexWeights::new(values)
}

/// Treated endpoints for the penalty interpolates: a shuffle of the batch
/// (uniform atoms) or weighted draws, cycled to `n` rows.
fn treated_endpoints<R: Rng + ?Sized>(batch: &EmpiricalMeasure, n: usize, rng: &mut R) -> Vec<f64> {
    let dim = batch.dim();
    let mut out = Vec::with_capacity(n * dim);
    if batch.is_uniform() {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        while out.len() < n * dim {
            order.shuffle(rng);
            for &k in order.iter().take(n - out.len() / dim) {
                out.extend_from_slice(batch.point(k));
            }
        }
    } else {
        for _ in 0..n {
            out.extend_from_slice(batch.point(batch.sample_index(rng)));
        }
    }
    out
}

/// Affine critic input map `z = (x - center) / scale` with one scale for all
/// coordinates, so a potential `f(x) = scale * g(z)` has the same gradient
/// norm in `x` as `g` has in `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub center: Vec<f64>,
    pub scale: f64,
}

impl InputScaling {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            scale: 1.0,
        }
    }

    /// Centre at the average of the measures' means; scale by the root mean
    /// squared coordinate deviation, each measure counted once.
    pub fn fit(measures: &[&EmpiricalMeasure]) -> Result<Self> {
        let first = measures.first().ok_or(Error::Empty("measure list"))?;
        let dim = first.dim();
        let k = measures.len() as f64;
        let mut center = vec![0.0; dim];
        for m in measures {
            for (c, v) in center.iter_mut().zip(m.mean()) {
                *c += v / k;
            }
        }
        let mut second = 0.0;
        for m in measures {
            for (x, w) in m.points().zip(m.weights()) {
                second += w * x.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / k;
            }
        }
        let scale = (second / dim as f64).sqrt();
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        Ok(Self { center, scale })
    }

    pub fn apply(&self, m: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
        let dim = self.center.len();
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
        let points: Vec<f64> = m
            .flat_points()
            .chunks_exact(dim)
            .flat_map(|x| x.iter().zip(&self.center).map(|(a, c)| (a - c) / self.scale))
            .collect();
        EmpiricalMeasure::weighted_flat(dim, points, m.weights().to_vec())
    }
}

/// A trained network together with the input map it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedCritic {
    pub net: CriticNetwork,
    pub scaling: InputScaling,
}

impl TrainedCritic {
    /// The potential `f(x)` in data units.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        let z: Vec<f64> = x
            .iter()
            .zip(&self.scaling.center)
            .map(|(a, c)| (a - c) / self.scaling.scale)
            .collect();
        Ok(self.scaling.scale * crate::critic::forward(&self.net, &z)?)
    }

    /// `E_m[f]` in data units.
    pub fn mean_output(&self, m: &EmpiricalMeasure) -> Result<f64> {
        Ok(self.scaling.scale * self.net.mean_output(&self.scaling.apply(m)?)?)
    }
}

/// Critic training state of one period: measures in critic coordinates and
/// the penalty weight that makes the critic objective a positive multiple of
/// the data-unit one.
struct CriticProblem {
    scaling: InputScaling,
    treated: EmpiricalMeasure,
    donors: Vec<EmpiricalMeasure>,
    zeta: f64,
}

impl CriticProblem {
    fn new(treated: &EmpiricalMeasure, donors: &[EmpiricalMeasure], config: &EstimatorConfig) -> Result<Self> {
        if !config.standardize_inputs {
            return Ok(Self {
                scaling: InputScaling::identity(treated.dim()),
                treated: treated.clone(),
                donors: donors.to_vec(),
                zeta: config.zeta,
            });
        }
        let all: Vec<&EmpiricalMeasure> = std::iter::once(treated).chain(donors).collect();
        let scaling = InputScaling::fit(&all)?;
        Ok(Self {
            treated: scaling.apply(treated)?,
            donors: donors.iter().map(|d| scaling.apply(d)).collect::<Result<_>>()?,
            // transport scales by 1 / scale in z units, the penalty does not
            zeta: config.zeta / scaling.scale,
            scaling,
        })
    }

    /// One Adam ascent step; the loss is reported in data units.
    fn step(
        &self,
        net: &mut CriticNetwork,
        adam: &mut AdamState,
        lambda: &SimplexWeights,
        config: &EstimatorConfig,
        rng: &mut SimRng,
    ) -> Result<CriticLossBreakdown> {
        let n_int = interpolate_count(&self.treated, config);
        let (loss, grads) = if config.batch_size == 0 {
            let xi = interpolates(&self.treated, &self.donors, lambda, n_int, rng)?;
            critic_loss_and_grads(net, &self.treated, &self.donors, lambda, self.zeta, &xi)?
        } else {
            let tb = minibatch(&self.treated, config.batch_size, rng)?;
            let dbs: Vec<EmpiricalMeasure> = self
                .donors
                .iter()
                .map(|d| minibatch(d, config.batch_size, rng))
                .collect::<Result<_>>()?;
            let xi = interpolates(&tb, &dbs, lambda, n_int, rng)?;
            critic_loss_and_grads(net, &tb, &dbs, lambda, self.zeta, &xi)?
        };
        adam_step(net, adam, &grads, config.alpha_theta, Direction::Ascend)?;
        let s = self.scaling.scale;
        Ok(CriticLossBreakdown {
            transport_term: s * loss.transport_term,
            penalty_term: loss.penalty_term,
            total: s * loss.total,
        })
    }
}

fn minibatch<R: Rng + ?Sized>(m: &EmpiricalMeasure, size: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
    let dim = m.dim();
    let mut points = Vec::with_capacity(size * dim);
    for _ in 0..size {
        points.extend_from_slice(m.point(m.sample_index(rng)));
    }
    EmpiricalMeasure::uniform_flat(dim, points)
}

/// Straight-line interpolates `u x_treated + (1 - u) x_synthetic`, one `u`
/// per pair.
fn interpolates<R: Rng + ?Sized>(
    treated: &EmpiricalMeasure,
    donors: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dim = treated.dim();
    let a = treated_endpoints(treated, n, rng);
    let b = sample_mixture_flat(donors, lambda, n, rng)?;
    let mut out = Vec::with_capacity(n * dim);
    for (ra, rb) in a.chunks_exact(dim).zip(b.chunks_exact(dim)) {
        let u: f64 = rng.random();
        out.extend(ra.iter().zip(rb).map(|(x, y)| u * x + (1.0 - u) * y));
    }
    Ok(out)
}

/// Trains a fresh critic for `steps` Adam ascent steps with the weights held
/// at `lambda`, using the critic settings of `config`. Returns the critic and
/// the loss breakdown of the last step in data units.
pub fn fit_critic(
    treated: &EmpiricalMeasure,
    donors: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    config: &EstimatorConfig,
    steps: usize,
    rng: &mut SimRng,
) -> Result<(TrainedCritic, CriticLossBreakdown)> {
    config.validate()?;
    if donors.is_empty() {
        return Err(Error::Empty("donor list"));
    }
    let problem = CriticProblem::new(treated, donors, config)?;
    let mut net = CriticNetwork::new(config.architecture(treated.dim()), rng)?;
    if config.zero_output_init {
        net.zero_output_layer();
    }
    let mut adam = AdamState::new(&net);
    let mut last = CriticLossBreakdown {
        transport_term: 0.0,
        penalty_term: 0.0,
        total: 0.0,
    };
    for _ in 0..steps {
        last = problem.step(&mut net, &mut adam, lambda, config, rng)?;
    }
    Ok((
        TrainedCritic {
            net,
            scaling: problem.scaling,
        },
        last,
    ))
}

fn interpolate_count(treated: &EmpiricalMeasure, config: &EstimatorConfig) -> usize {
    match (config.interpolate_batch, config.batch_size) {
        (0, 0) => treated.len(),
        (0, b) => b,
        (n, _) => n,
    }
}

/// Runs the alternating critic / mirror-descent solve for one treated cell
/// against its donor cells.
pub fn estimate_cells(
    treated: &EmpiricalMeasure,
    donors: &[EmpiricalMeasure],
    config: &EstimatorConfig,
    rng: &mut SimRng,
) -> Result<(SimplexWeights, PeriodTrace)> {
    config.validate()?;
    if donors.len() < 2 {
        return Err(Error::InvalidPanel(format!("need at least 2 donors, got {}", donors.len())));
    }
    let dim = treated.dim();
    if let Some(bad) = donors.iter().find(|d| d.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let j = donors.len();
    let mut net = CriticNetwork::new(config.architecture(dim), rng)?;
    if config.zero_output_init {
        net.zero_output_layer();
    }
    let mut adam = AdamState::new(&net);
    let mut lambda = SimplexWeights::uniform(j);

    let mut points = Vec::with_capacity(config.max_outer_iters);
    let mut changes: Vec<f64> = Vec::with_capacity(config.max_outer_iters);
    let mut converged = false;
    let mut scores = vec![0.0; j];
    let problem = CriticProblem::new(treated, donors, config)?;
    let s = problem.scaling.scale;

    for _ in 0..config.max_outer_iters {
        let mut critic_objective = 0.0;
        let mut last_penalty = 0.0;
        for _ in 0..config.n_critic {
            let loss = problem.step(&mut net, &mut adam, &lambda, config, rng)?;
            critic_objective = loss.total;
            last_penalty = loss.penalty_term;
        }

        let treated_mean = s * net.mean_output(&problem.treated)?;
        let mut donor_means: Vec<f64> =
            problem.donors.iter().map(|d| Ok(s * net.mean_output(d)?)).collect::<Result<_>>()?;
        let mixture_mean: f64 = lambda.values().iter().zip(&donor_means).map(|(l, m)| l * m).sum();
        let mut transport_estimate = treated_mean - mixture_mean;
        if config.orientation_check && transport_estimate < 0.0 {
            // -f has the same penalty and a positive transport term
            net.negate_output();
            transport_estimate = -transport_estimate;
            donor_means.iter_mut().for_each(|m| *m = -*m);
            critic_objective = -critic_objective - 2.0 * config.zeta * last_penalty;
        }
        for (g, m) in scores.iter_mut().zip(&donor_means) {
            *g = -m;
        }
        let regularized_objective = transport_estimate + config.eta * lambda.neg_entropy();

        let next = mirror_descent_step(&lambda, &scores, config.eta, config.alpha_lambda)?;
        let change = next
            .values()
            .iter()
            .zip(lambda.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        lambda = next;
        changes.push(change);
        points.push(TracePoint {
            critic_objective,
            transport_estimate,
            regularized_objective,
            lambda_change: change,
        });

        if changes.len() >= CONVERGENCE_WINDOW {
            let window = &changes[changes.len() - CONVERGENCE_WINDOW..];
            if window.iter().sum::<f64>() / (CONVERGENCE_WINDOW as f64) < config.lambda_tol {
                converged = true;
                break;
            }
        }
    }

    let iterations = points.len();
    Ok((
        lambda,
        PeriodTrace {
            points,
            iterations,
            converged,
            final_scores: scores,
        },
    ))
}

/// Fits the weights for one pre-treatment period of the panel.
pub fn estimate_period(
    panel: &PanelDataset,
    period: usize,
    config: &EstimatorConfig,
    rng: &mut SimRng,
) -> Result<(SimplexWeights, PeriodTrace)> {
    if period >= panel.cutoff() {
        return Err(Error::InvalidConfig(format!(
            "period index {period} is not a pre-treatment period (cutoff {})",
            panel.cutoff()
        )));
    }
    estimate_cells(panel.treated(period), &panel.donors(period), config, rng)
}

/// Fits every pre-treatment period with its own random stream (derived from
/// the config seed and the period index) and averages the period weights.
pub fn estimate(panel: &PanelDataset, config: &EstimatorConfig) -> Result<EstimationReport> {
    config.validate()?;
    let t0 = panel.cutoff();
    let temporal = config.temporal_weights_for(t0)?;
    let mut per_period = Vec::with_capacity(t0);
    let mut traces = Vec::with_capacity(t0);
    for t in 0..t0 {
        let mut rng = rng::stream(config.seed, &[t as u64]);
        let (w, trace) = estimate_period(panel, t, config, &mut rng)?;
        per_period.push(w);
        traces.push(trace);
    }
    let aggregated = SimplexWeights::average(&per_period, &temporal)?;
    Ok(EstimationReport {
        donors: panel.units()[1..].to_vec(),
        periods: panel.periods()[..t0].to_vec(),
        per_period_weights: per_period,
        aggregated,
        temporal_weights: temporal,
        iterations_used: traces.iter().map(|t| t.iterations).collect(),
        converged: traces.iter().map(|t| t.converged).collect(),
        loss_traces: traces.into_iter().map(|t| t.points).collect(),
        config: config.clone(),
        seed: config.seed,
    })
}

/// Mixture of the donor cells at `period` under `lambda_star`.
pub fn synthesize_counterfactual(
    panel: &PanelDataset,
    lambda_star: &SimplexWeights,
    period: usize,
) -> Result<EmpiricalMeasure> {
    if period >= panel.periods().len() {
        return Err(Error::UnknownPeriod(period.to_string()));
    }
    weighted_mixture(&panel.donors(period), lambda_star)
}

/// Weight-fitting method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Adversarial W1 estimator.
    Wgan,
    /// Integrated squared CDF gap.
    Cdfl2,
    /// Squared gap of averaged quantile functions.
    W2quantile,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Wgan, Method::Cdfl2, Method::W2quantile];

    pub fn name(self) -> &'static str {
        match self {
            Method::Wgan => "wgan",
            Method::Cdfl2 => "cdfl2",
            Method::W2quantile => "w2quantile",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wgan" => Ok(Method::Wgan),
            "cdfl2" => Ok(Method::Cdfl2),
            "w2quantile" => Ok(Method::W2quantile),
            other => Err(Error::InvalidConfig(format!(
                "unknown method `{other}` (expected wgan, cdfl2 or w2quantile)"
            ))),
        }
    }
}

/// Per-period and aggregated weights from any [`Method`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: Method,
    pub per_period_weights: Vec<SimplexWeights>,
    pub aggregated: SimplexWeights,
}

/// Fits the pre-treatment weights of `panel` with `method`. Benchmarks use
/// the same per-period streams and temporal aggregation as the adversarial
/// estimator.
pub fn fit_method(panel: &PanelDataset, method: Method, config: &EstimatorConfig) -> Result<MethodFit> {
    config.validate()?;
    let (per_period, aggregated) = match method {
        Method::Wgan => {
            let r = estimate(panel, config)?;
            (r.per_period_weights, r.aggregated)
        }
        Method::Cdfl2 | Method::W2quantile => {
            let t0 = panel.cutoff();
            let temporal = config.temporal_weights_for(t0)?;
            let mut weights = Vec::with_capacity(t0);
            for t in 0..t0 {
                let mut rng = rng::stream(config.seed, &[t as u64]);
                let treated = panel.treated(t);
                let donors = panel.donors(t);
                let w = if method == Method::Cdfl2 {
                    benchmarks::cdf_l2_estimate(treated, &donors, config.qp_restarts, &mut rng)?
                } else {
                    benchmarks::quantile_w2_estimate(treated, &donors, config.quantile_grid, config.qp_restarts, &mut rng)?
                };
                weights.push(w);
            }
            let agg = SimplexWeights::average(&weights, &temporal)?;
            (weights, agg)
        }
    };
    Ok(MethodFit {
        method,
        per_period_weights: per_period,
        aggregated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_scores_keep_weights() {
        let l = SimplexWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let next = mirror_descent_step(&l, &[0.0; 3], 0.0, 0.7).unwrap();
        for (a, b) in next.values().iter().zip(l.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        let u = SimplexWeights::uniform(4);
        let next = mirror_descent_step(&u, &[0.0; 4], 3.0, 0.7).unwrap();
        for v in next.values() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_step() {
        let u = SimplexWeights::uniform(4);
        let next = mirror_descent_step(&u, &[1.0, 0.0, 0.0, 0.0], 0.0, std::f64::consts::LN_2).unwrap();
        let expected = [1.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0];
        for (a, b) in next.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn step_stays_positive_under_extreme_scores() {
        let u = SimplexWeights::uniform(3);
        let next = mirror_descent_step(&u, &[1e6, 0.0, -1e6], 0.01, 1.0).unwrap();
        assert!(next.values().iter().all(|&v| v > 0.0));
        assert!(mirror_descent_step(&u, &[f64::NAN, 0.0, 0.0], 0.0, 1.0).is_err());
        assert!(mirror_descent_step(&u, &[0.0, 0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::default().validate().is_ok());
        let bad = EstimatorConfig { zeta: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig { n_critic: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig { eta: 100.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = EstimatorConfig { eta: 100.0, alpha_lambda: 0.01, ..Default::default() };
        assert!(ok.validate().is_ok());
        let bad = EstimatorConfig { temporal_weights: Some(vec![0.7, 0.7]), ..Default::default() };
        assert!(bad.validate().is_err());
        let parsed: EstimatorConfig = serde_json::from_str(r#"{"eta": 0.5, "seed": 9}"#).unwrap();
        assert_eq!(parsed.eta, 0.5);
        assert_eq!(parsed.n_critic, 5);
        assert!(serde_json::from_str::<EstimatorConfig>(r#"{"etta": 0.5}"#).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("ols".parse::<Method>().is_err());
    }
}
