//! Kantorovich-potential critic: a fully connected scalar network with
//! Leaky-ReLU hidden layers, exact reverse-mode gradients with respect to
//! parameters and inputs, the double-backward pass needed for the gradient
//! penalty, and an Adam optimizer.
//!
//! Leaky ReLU is piecewise linear, so the input gradient of the network is a
//! product of weight matrices masked by constant activation slopes. The
//! gradient of the penalty with respect to the parameters therefore needs no
//! second derivative of the activation; it is a second linear sweep through
//! the same masks.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, SimplexWeights};

pub const DEFAULT_WIDTH: usize = 64;
pub const DEFAULT_DEPTH: usize = 2;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Shape of a critic: `input_dim -> width x depth -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticArchitecture {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub leaky_slope: f64,
}

impl CriticArchitecture {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            width: DEFAULT_WIDTH,
            depth: DEFAULT_DEPTH,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.depth {
            dims.push((fan_in, self.width));
            fan_in = self.width;
        }
        dims.push((fan_in, 1));
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::InvalidConfig(
                "critic dimensions must be positive".into(),
            ));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::InvalidConfig("leaky slope must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// One affine map `a -> a W + b`, `W` stored as `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }
}

/// The critic `f_theta`. Hidden layers use Leaky ReLU; the output is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNetwork {
    arch: CriticArchitecture,
    layers: Vec<Layer>,
}

/// Parameter-shaped gradient (or accumulator) of a [`CriticNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct CriticGradient {
    pub layers: Vec<Layer>,
}

impl CriticGradient {
    fn zeros_like(net: &CriticNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    /// Gradient shaped like `net` from a flat vector in
    /// [`CriticNetwork::params_flat`] order.
    pub fn from_flat(net: &CriticNetwork, flat: &[f64]) -> Result<Self> {
        let mut shaped = net.clone();
        shaped.set_params_flat(flat)?;
        Ok(Self { layers: shaped.layers })
    }

    /// Flattened in the same order as [`CriticNetwork::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// Transport and penalty parts of the critic objective. `total` is
/// `transport_term - zeta * penalty_term`, the quantity the critic ascends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticLossBreakdown {
    pub transport_term: f64,
    pub penalty_term: f64,
    pub total: f64,
}

struct ForwardCache {
    // activations a_0 = x, a_1, ..., a_L
    acts: Vec<Array2<f64>>,
    // activation slopes D_1, ..., D_L
    slopes: Vec<Array2<f64>>,
    out: Array1<f64>,
}

impl CriticNetwork {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(arch: CriticArchitecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Layer {
                    weight: Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    /// Sets the output layer to zero, so the network starts as the constant 0
    /// while keeping random hidden features. The first ascent steps are then
    /// driven by the transport term alone, which fixes the orientation of the
    /// potential before the gradient penalty can lock in either sign.
    pub fn zero_output_layer(&mut self) {
        let out = self.layers.last_mut().expect("network has an output layer");
        out.weight.fill(0.0);
        out.bias.fill(0.0);
    }

    /// Replaces `f` by `-f`. The gradient penalty is unchanged.
    pub fn negate_output(&mut self) {
        let out = self.layers.last_mut().expect("network has an output layer");
        out.weight.mapv_inplace(|v| -v);
        out.bias.mapv_inplace(|v| -v);
    }

    /// All-zero parameters.
    pub fn zeros(arch: CriticArchitecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o))
            .collect();
        Ok(Self { arch, layers })
    }

    /// Builds a network from explicit layers (hidden layers first, then the
    /// `width x 1` output layer).
    pub fn from_layers(layers: Vec<Layer>, leaky_slope: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::InvalidConfig("need at least one hidden layer".into()));
        }
        let input_dim = layers[0].weight.nrows();
        let width = layers[0].weight.ncols();
        let arch = CriticArchitecture {
            input_dim,
            width,
            depth: layers.len() - 1,
            leaky_slope,
        };
        arch.validate()?;
        for (layer, (i, o)) in layers.iter().zip(arch.layer_dims()) {
            if layer.weight.dim() != (i, o) || layer.bias.len() != o {
                return Err(Error::InvalidConfig(format!(
                    "layer shape {:?} does not fit a uniform-width network",
                    layer.weight.dim()
                )));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn architecture(&self) -> CriticArchitecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("critic input"));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        let slope = self.arch.leaky_slope;
        let hidden = &self.layers[..self.layers.len() - 1];
        let mut acts = Vec::with_capacity(hidden.len() + 1);
        let mut slopes = Vec::with_capacity(hidden.len());
        acts.push(x.to_owned());
        for layer in hidden {
            let mut z = acts.last().expect("nonempty").dot(&layer.weight);
            z += &layer.bias;
            let d = z.mapv(|v| if v >= 0.0 { 1.0 } else { slope });
            z *= &d;
            slopes.push(d);
            acts.push(z);
        }
        let head = &self.layers[self.layers.len() - 1];
        let out = acts.last().expect("nonempty").dot(&head.weight.column(0)) + head.bias[0];
        ForwardCache { acts, slopes, out }
    }

    /// Evaluates the critic on each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                got: x.ncols(),
            });
        }
        Ok(self.forward_cached(x).out)
    }

    /// Weighted mean of the critic over the atoms of a measure.
    pub fn mean_output(&self, measure: &EmpiricalMeasure) -> Result<f64> {
        let x = measure_view(measure)?;
        let out = self.forward_batch(x)?;
        Ok(out.iter().zip(measure.weights()).map(|(f, w)| f * w).sum())
    }

    /// Input gradients `grad_x f(x)` for each row, plus the activation cache.
    fn input_grad_cached(&self, x: ArrayView2<'_, f64>) -> (ForwardCache, Vec<Array2<f64>>, Array2<f64>) {
        let cache = self.forward_cached(x);
        let n = x.nrows();
        let n_hidden = cache.slopes.len();
        let head = &self.layers[n_hidden];
        // v_l = D_l * (v_{l+1} W_{l+1}^T), v_L = D_L * w_out
        let mut vs: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_hidden];
        let top = &cache.slopes[n_hidden - 1] * &head.weight.column(0).insert_axis(Axis(0));
        vs[n_hidden - 1] = top;
        for l in (0..n_hidden - 1).rev() {
            let s = vs[l + 1].dot(&self.layers[l + 1].weight.t());
            vs[l] = &cache.slopes[l] * &s;
        }
        let g = vs[0].dot(&self.layers[0].weight.t());
        debug_assert_eq!(g.nrows(), n);
        (cache, vs, g)
    }

    /// Value-and-parameter-gradient of `sum_b coeff_b f(x_b)`.
    fn backward_weighted(&self, cache: &ForwardCache, coeff: &Array1<f64>, grad: &mut CriticGradient) {
        let n_hidden = cache.slopes.len();
        let head = &self.layers[n_hidden];
        let a_top = &cache.acts[n_hidden];
        {
            let g = &mut grad.layers[n_hidden];
            g.weight.column_mut(0).scaled_add(1.0, &a_top.t().dot(coeff));
            g.bias[0] += coeff.sum();
        }
        // delta_L = D_L * (coeff w_out^T)
        let mut delta = coeff.view().insert_axis(Axis(1)).dot(&head.weight.t());
        delta *= &cache.slopes[n_hidden - 1];
        for l in (0..n_hidden).rev() {
            let g = &mut grad.layers[l];
            g.weight += &cache.acts[l].t().dot(&delta);
            g.bias += &delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weight.t());
                next *= &cache.slopes[l - 1];
                delta = next;
            }
        }
    }

    /// Parameter gradient of `sum_b <u_b, grad_x f(x_b)>` given the input
    /// gradient pass. Biases receive nothing: the input gradient does not
    /// depend on them once the activation pattern is fixed.
    fn backward_input_grad(
        &self,
        cache: &ForwardCache,
        vs: &[Array2<f64>],
        u: &Array2<f64>,
        scale: f64,
        grad: &mut CriticGradient,
    ) {
        let n_hidden = cache.slopes.len();
        // G = V_1 W_1^T
        grad.layers[0].weight.scaled_add(scale, &u.t().dot(&vs[0]));
        let mut r = u.dot(&self.layers[0].weight);
        for l in 0..n_hidden {
            // V_{l} = D_l * S_l, S_l = V_{l+1} W_{l+1}^T (or w_out at the top)
            let ds = &cache.slopes[l] * &r;
            if l + 1 < n_hidden {
                grad.layers[l + 1].weight.scaled_add(scale, &ds.t().dot(&vs[l + 1]));
                r = ds.dot(&self.layers[l + 1].weight);
            } else {
                let dw = ds.sum_axis(Axis(0));
                grad.layers[n_hidden].weight.column_mut(0).scaled_add(scale, &dw);
            }
        }
    }
}

/// Row view of a measure's atoms.
pub(crate) fn measure_view(m: &EmpiricalMeasure) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((m.len(), m.dim()), m.flat_points())
        .map_err(|_| Error::DimensionMismatch { expected: m.dim(), got: 0 })
}

/// `f_theta(x)`.
pub fn forward(net: &CriticNetwork, x: &[f64]) -> Result<f64> {
    net.check_input(x)?;
    let view = ArrayView2::from_shape((1, x.len()), x).expect("shape checked");
    Ok(net.forward_cached(view).out[0])
}

/// `grad_x f_theta(x)`. At an activation kink the positive branch is used.
pub fn grad_input(net: &CriticNetwork, x: &[f64]) -> Result<Vec<f64>> {
    net.check_input(x)?;
    let view = ArrayView2::from_shape((1, x.len()), x).expect("shape checked");
    let (_, _, g) = net.input_grad_cached(view);
    Ok(g.row(0).to_vec())
}

/// Critic objective and its exact parameter gradient.
///
/// The transport term is `E_treated[f] - sum_j lambda_j E_donor_j[f]` with
/// expectations taken under each batch's atom weights. The penalty is the
/// mean of `(|grad_x f| - 1)^2` over the rows of `interpolates`
/// (row-major, `net.input_dim()` columns). The returned gradient is that of
/// `transport_term - zeta * penalty_term`.
pub fn critic_loss_and_grads(
    net: &CriticNetwork,
    treated_batch: &EmpiricalMeasure,
    donor_batches: &[EmpiricalMeasure],
    lambda: &SimplexWeights,
    zeta: f64,
    interpolates: &[f64],
) -> Result<(CriticLossBreakdown, CriticGradient)> {
    let dim = net.input_dim();
    if donor_batches.is_empty() {
        return Err(Error::Empty("donor batches"));
    }
    if donor_batches.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            expected: donor_batches.len(),
            got: lambda.len(),
        });
    }
    for m in std::iter::once(treated_batch).chain(donor_batches) {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
    }
    if interpolates.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: interpolates.len() % dim,
        });
    }
    if zeta > 0.0 && interpolates.is_empty() {
        return Err(Error::Empty("interpolates"));
    }

    // stack every atom with its signed coefficient in the transport term
    let total_atoms = treated_batch.len() + donor_batches.iter().map(EmpiricalMeasure::len).sum::<usize>();
    let mut points = Vec::with_capacity(total_atoms * dim);
    let mut coeff = Vec::with_capacity(total_atoms);
    points.extend_from_slice(treated_batch.flat_points());
    coeff.extend_from_slice(treated_batch.weights());
    for (donor, &lj) in donor_batches.iter().zip(lambda.values()) {
        points.extend_from_slice(donor.flat_points());
        coeff.extend(donor.weights().iter().map(|w| -lj * w));
    }
    let x = Array2::from_shape_vec((total_atoms, dim), points).expect("stacked rows");
    let coeff = Array1::from(coeff);

    let mut grad = CriticGradient::zeros_like(net);
    let cache = net.forward_cached(x.view());
    let transport_term = cache.out.dot(&coeff);
    net.backward_weighted(&cache, &coeff, &mut grad);

    let mut penalty_term = 0.0;
    let n_int = interpolates.len() / dim;
    if n_int > 0 {
        let xi = ArrayView2::from_shape((n_int, dim), interpolates).expect("checked");
        let (icache, vs, g) = net.input_grad_cached(xi);
        let mut u = Array2::zeros((n_int, dim));
        for (grow, mut urow) in g.rows().into_iter().zip(u.rows_mut()) {
            let norm = grow.dot(&grow).sqrt();
            penalty_term += (norm - 1.0).powi(2);
            // d/dg (|g| - 1)^2 = 2 (|g| - 1) g / |g|; zero at g = 0 by convention
            if norm > 0.0 {
                urow.assign(&(&grow * (2.0 * (norm - 1.0) / norm)));
            }
        }
        penalty_term /= n_int as f64;
        if zeta != 0.0 {
            net.backward_input_grad(&icache, &vs, &u, -zeta / n_int as f64, &mut grad);
        }
    }

    let breakdown = CriticLossBreakdown {
        transport_term,
        penalty_term,
        total: transport_term - zeta * penalty_term,
    };
    Ok((breakdown, grad))
}

/// Which way [`adam_step`] moves the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Ascend,
    Descend,
}

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Layer>,
    second: Vec<Layer>,
}

impl AdamState {
    pub fn new(net: &CriticNetwork) -> Self {
        let zeros = CriticGradient::zeros_like(net).layers;
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `net` with gradient `grads`.
pub fn adam_step(
    net: &mut CriticNetwork,
    state: &mut AdamState,
    grads: &CriticGradient,
    alpha_theta: f64,
    direction: Direction,
) -> Result<()> {
    let shapes_ok = grads.layers.len() == net.layers.len()
        && state.first.len() == net.layers.len()
        && net
            .layers
            .iter()
            .zip(&grads.layers)
            .zip(&state.first)
            .all(|((p, g), m)| p.same_shape(g) && p.same_shape(m));
    if !shapes_ok {
        return Err(Error::InvalidConfig("gradient shape does not match network".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("critic gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let sign = match direction {
        Direction::Ascend => 1.0,
        Direction::Descend => -1.0,
    };
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p += sign * alpha_theta * m_hat / (v_hat.sqrt() + eps);
    };
    for (((p, g), m), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        Zip::from(&mut p.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(update);
        Zip::from(&mut p.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(update);
    }
    Ok(())
}
