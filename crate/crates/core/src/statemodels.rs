//! Stationary Markov state processes, their stationary grids, transition
//! structure and seeded simulation.
//!
//! Every model carries an auxiliary shock `Y'` next to the state. For the OU
//! skeleton it is the integrated state `∫₀^τ̄ Z_s ds` over the sampling
//! interval (a Gaussian bridge given both endpoints); for the other kinds it
//! is an independent standard normal.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::BoolMatrix;
use crate::quadrature::normal_rule;
use crate::rng::{stream, SeedTree};
use crate::sparse::Csr;

/// Burn-in length for simulations that cannot start from an exact stationary draw.
pub const BURN_IN: usize = 10_000;
/// Stacked grids span the pilot mean ± this many stationary standard deviations.
pub const TRUNCATION_SDS: f64 = 8.0;
/// A simulated stacked state beyond this magnitude counts as divergent.
pub const EXPLOSION_BOUND: f64 = 1e12;
const PILOT_LENGTH: usize = 200_000;
const PILOT_SEED: u64 = 0x5EED_0F_A1;

/// Conditional mean `h` of a stacked nonlinear autoregression.
#[derive(Clone)]
pub enum MeanFunction {
    /// `h(x) = intercept + Σₖ coeffs[k]·x[k]`.
    Affine { intercept: f64, coeffs: Vec<f64> },
    /// User-supplied map on `R^ℓ`.
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl MeanFunction {
    pub fn affine(intercept: f64, coeffs: Vec<f64>) -> Self {
        MeanFunction::Affine { intercept, coeffs }
    }

    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        MeanFunction::Custom(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanFunction::Affine { intercept, coeffs } => {
                intercept + coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
            }
            MeanFunction::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for MeanFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanFunction::Affine { intercept, coeffs } => f
                .debug_struct("Affine")
                .field("intercept", intercept)
                .field("coeffs", coeffs)
                .finish(),
            MeanFunction::Custom(_) => f.write_str("Custom(<fn>)"),
        }
    }
}

/// Innovation law `f_U` of a stacked autoregression. All laws have full support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Innovation {
    Gaussian { sd: f64 },
    StudentT { df: f64, scale: f64 },
    Laplace { scale: f64 },
}

impl Innovation {
    pub fn ln_density(&self, u: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        use std::f64::consts::PI;
        match *self {
            Innovation::Gaussian { sd } => {
                let z = u / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
            }
            Innovation::StudentT { df, scale } => {
                let z = u / scale;
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
            }
            Innovation::Laplace { scale } => -u.abs() / scale - (2.0 * scale).ln(),
        }
    }

    pub fn density(&self, u: f64) -> f64 {
        self.ln_density(u).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Innovation::Gaussian { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            Innovation::StudentT { df, scale } => {
                let t = rand_distr::StudentT::new(df).expect("validated degrees of freedom");
                scale * t.sample(rng)
            }
            Innovation::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }

    /// Variance, infinite for Student-t with `df ≤ 2`.
    pub fn variance(&self) -> f64 {
        match *self {
            Innovation::Gaussian { sd } => sd * sd,
            Innovation::StudentT { df, scale } if df > 2.0 => scale * scale * df / (df - 2.0),
            Innovation::StudentT { .. } => f64::INFINITY,
            Innovation::Laplace { scale } => 2.0 * scale * scale,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Innovation::Gaussian { sd } => sd > 0.0 && sd.is_finite(),
            Innovation::StudentT { df, scale } => df > 0.0 && scale > 0.0 && scale.is_finite(),
            Innovation::Laplace { scale } => scale > 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("innovation parameters out of range: {self:?}")))
        }
    }
}

/// A stationary Markov specification.
#[derive(Debug, Clone)]
pub enum StateModel {
    /// Finite chain on `states` with a row-stochastic transition matrix.
    DiscreteChain { transition: Vec<Vec<f64>>, states: Vec<f64> },
    /// `X' = aX + σε`.
    GaussianAR1 { a: f64, sigma: f64 },
    /// `W' = h(W, W₋₁, …, W₋ℓ₊₁) + U`, stacked into `X = (W, …, W₋ℓ₊₁)`.
    StackedNAR { order: usize, mean: MeanFunction, innovation: Innovation },
    /// Ornstein–Uhlenbeck `dZ = −κZ dt + σ dB` sampled every `tau`.
    OUSkeleton { kappa: f64, sigma: f64, tau: f64 },
}

impl StateModel {
    /// Chain with states labelled `0, 1, …, n−1`.
    pub fn discrete_chain(transition: Vec<Vec<f64>>) -> Result<Self> {
        let states = (0..transition.len()).map(|i| i as f64).collect();
        Self::discrete_chain_with_states(transition, states)
    }

    pub fn discrete_chain_with_states(transition: Vec<Vec<f64>>, states: Vec<f64>) -> Result<Self> {
        let m = StateModel::DiscreteChain { transition, states };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian_ar1(a: f64, sigma: f64) -> Result<Self> {
        let m = StateModel::GaussianAR1 { a, sigma };
        m.validate()?;
        Ok(m)
    }

    pub fn stacked_nar(order: usize, mean: MeanFunction, innovation: Innovation) -> Result<Self> {
        let m = StateModel::StackedNAR { order, mean, innovation };
        m.validate()?;
        Ok(m)
    }

    pub fn ou_skeleton(kappa: f64, sigma: f64, tau: f64) -> Result<Self> {
        let m = StateModel::OUSkeleton { kappa, sigma, tau };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StateModel::DiscreteChain { transition, states } => {
                let n = transition.len();
                if n == 0 || states.len() != n {
                    return Err(Error::InvalidModel("chain needs n states and an n×n matrix".into()));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::InvalidModel(format!("row {i} has length {}", row.len())));
                    }
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return Err(Error::InvalidModel(format!("row {i} has a negative entry")));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidModel(format!("row {i} sums to {s}")));
                    }
                }
                let mut sorted = states.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::InvalidModel("chain states must be distinct".into()));
                }
                Ok(())
            }
            StateModel::GaussianAR1 { a, sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::InvalidModel(format!("sigma must be positive, got {sigma}")));
                }
                if !(a.abs() < 1.0) {
                    return Err(Error::NonStationaryModel(format!("|a| = {} ≥ 1", a.abs())));
                }
                Ok(())
            }
            StateModel::StackedNAR { order, mean, innovation } => {
                if *order == 0 {
                    return Err(Error::InvalidModel("order must be at least 1".into()));
                }
                if let MeanFunction::Affine { coeffs, .. } = mean {
                    if coeffs.len() != *order {
                        return Err(Error::InvalidModel(format!(
                            "affine mean has {} coefficients for order {order}",
                            coeffs.len()
                        )));
                    }
                }
                innovation.validate()
            }
            StateModel::OUSkeleton { kappa, sigma, tau } => {
                if [kappa, sigma, tau].iter().all(|v| v.is_finite() && **v > 0.0) {
                    Ok(())
                } else {
                    Err(Error::InvalidModel("OU parameters must be positive".into()))
                }
            }
        }
    }

    /// Dimension of the (stacked) state vector.
    pub fn dim(&self) -> usize {
        match self {
            StateModel::StackedNAR { order, .. } => *order,
            _ => 1,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            StateModel::DiscreteChain { .. } => "DiscreteChain",
            StateModel::GaussianAR1 { .. } => "GaussianAR1",
            StateModel::StackedNAR { .. } => "StackedNAR",
            StateModel::OUSkeleton { .. } => "OUSkeleton",
        }
    }

    /// AR(1) parameters `(a, σ)` of a Gaussian AR(1) or of the sampled OU process.
    pub fn ar1_parameters(&self) -> Option<(f64, f64)> {
        match *self {
            StateModel::GaussianAR1 { a, sigma } => Some((a, sigma)),
            StateModel::OUSkeleton { kappa, sigma, tau } => {
                let a = (-kappa * tau).exp();
                // 1 − e^{−2κτ} via expm1 for small κτ
                let v = sigma * sigma * (-(-2.0 * kappa * tau).exp_m1()) / (2.0 * kappa);
                Some((a, v.sqrt()))
            }
            _ => None,
        }
    }

    /// Stationary standard deviation of a Gaussian AR(1)-type model.
    pub fn stationary_sd(&self) -> Option<f64> {
        self.ar1_parameters().map(|(a, s)| s / (1.0 - a * a).sqrt())
    }

    /// Conditional mean and variance of the auxiliary shock `Y'` given `(x, x')`.
    pub fn shock_moments(&self, x: &[f64], x_next: &[f64]) -> (f64, f64) {
        match *self {
            StateModel::OUSkeleton { kappa, sigma, tau } => {
                let a = (-kappa * tau).exp();
                let s2 = sigma * sigma;
                let vz = s2 * (1.0 - a * a) / (2.0 * kappa);
                let var_i = s2 / (kappa * kappa)
                    * (tau - 2.0 * (1.0 - a) / kappa + (1.0 - a * a) / (2.0 * kappa));
                let cov = s2 * (1.0 - a) * (1.0 - a) / (2.0 * kappa * kappa);
                let mean = x[0] * (1.0 - a) / kappa + cov / vz * (x_next[0] - a * x[0]);
                (mean, (var_i - cov * cov / vz).max(0.0))
            }
            _ => (0.0, 1.0),
        }
    }

    /// Stacked successor `(g', x₀, …, x_{ℓ−2})` of `x` with new first coordinate `g`.
    pub fn shift_state(&self, x: &[f64], g: f64) -> Vec<f64> {
        let mut next = Vec::with_capacity(x.len());
        next.push(g);
        next.extend_from_slice(&x[..x.len().saturating_sub(1)]);
        next
    }

    /// Calls `f(prob, x', stencil)` for each quadrature node of the one-step
    /// transition out of `x`; `stencil` lists grid indices and interpolation
    /// weights representing `x'` on `grid`. Probabilities sum to one. Returns the
    /// number of coordinates clamped to the grid hull.
    pub(crate) fn visit_transitions<F>(&self, grid: &Grid, x: &[f64], mut f: F) -> Result<usize>
    where
        F: FnMut(f64, &[f64], &[(usize, f64)]),
    {
        match (self, &grid.layout) {
            (StateModel::DiscreteChain { transition, .. }, _) => {
                let i = grid.find_point(x).ok_or_else(|| Error::PathOffGrid(x.to_vec()))?;
                for (j, &p) in transition[i].iter().enumerate() {
                    if p > 0.0 {
                        f(p, grid.point(j), &[(j, 1.0)]);
                    }
                }
                Ok(0)
            }
            (StateModel::GaussianAR1 { .. } | StateModel::OUSkeleton { .. }, GridLayout::Nodes { log_measure }) => {
                let (a, s) = self.ar1_parameters().unwrap();
                let mu = a * x[0];
                let logp: Vec<f64> = grid
                    .points
                    .iter()
                    .zip(log_measure)
                    .map(|(xj, lm)| {
                        let z = (xj - mu) / s;
                        -0.5 * z * z + lm
                    })
                    .collect();
                let probs = normalize_log(&logp);
                for (j, p) in probs.into_iter().enumerate() {
                    f(p, &grid.points[j..j + 1], &[(j, 1.0)]);
                }
                Ok(0)
            }
            (StateModel::StackedNAR { order, mean, innovation }, GridLayout::Tensor { axis, log_measure }) => {
                let l = *order;
                if x.len() != l {
                    return Err(Error::DimensionMismatch { expected: l, got: x.len() });
                }
                let n_axis = axis.len();
                let hx = mean.eval(x);
                let logp: Vec<f64> = axis
                    .iter()
                    .zip(log_measure)
                    .map(|(g, lm)| innovation.ln_density(g - hx) + lm)
                    .collect();
                if logp.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel(format!(
                        "innovation density not positive and finite around h(x) = {hx}"
                    )));
                }
                let probs = normalize_log(&logp);
                // Stencil of the deterministic coordinates (x₀, …, x_{ℓ−2}) on axes 1..ℓ.
                let mut clamped = 0;
                let mut base: Vec<(usize, f64)> = vec![(0, 1.0)];
                for k in 1..l {
                    let stride = n_axis.pow((l - 1 - k) as u32);
                    let (pts, hit_clamp) = locate(axis, x[k - 1]);
                    clamped += usize::from(hit_clamp);
                    base = base
                        .iter()
                        .flat_map(|&(off, w)| pts.iter().map(move |&(ix, t)| (off + ix * stride, w * t)))
                        .collect();
                }
                let lead = n_axis.pow((l - 1) as u32);
                let mut next = vec![0.0; l];
                next[1..].copy_from_slice(&x[..l - 1]);
                let mut stencil = Vec::with_capacity(base.len());
                for (a_ix, p) in probs.into_iter().enumerate() {
                    next[0] = axis[a_ix];
                    stencil.clear();
                    stencil.extend(base.iter().map(|&(off, w)| (a_ix * lead + off, w)));
                    f(p, &next, &stencil);
                }
                Ok(clamped)
            }
            _ => Err(Error::InvalidGrid(format!("grid layout does not fit a {} model", self.kind_name()))),
        }
    }

    /// Sparse one-step transition matrix on `grid` (the UnitSDF operator).
    pub(crate) fn unit_transition(&self, grid: &Grid) -> Result<(Csr, usize)> {
        let mut csr = Csr::with_cols(grid.len());
        let mut clamped = 0;
        let mut entries = Vec::new();
        for i in 0..grid.len() {
            clamped += self.visit_transitions(grid, grid.point(i), |p, _, st| {
                entries.extend(st.iter().map(|&(j, w)| (j, p * w)));
            })?;
            csr.push_row(&mut entries);
        }
        Ok((csr, clamped))
    }

    fn step<R: Rng + ?Sized>(&self, x: &[f64], chain_index: &mut usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            StateModel::DiscreteChain { transition, states } => {
                let u: f64 = rng.random();
                let row = &transition[*chain_index];
                let mut acc = 0.0;
                let mut j = row.len() - 1;
                for (k, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        j = k;
                        break;
                    }
                }
                // Guard against landing on a zero-probability tail state through rounding.
                while row[j] == 0.0 && j > 0 {
                    j -= 1;
                }
                *chain_index = j;
                Ok(vec![states[j]])
            }
            StateModel::GaussianAR1 { .. } | StateModel::OUSkeleton { .. } => {
                let (a, s) = self.ar1_parameters().unwrap();
                let e: f64 = StandardNormal.sample(rng);
                Ok(vec![a * x[0] + s * e])
            }
            StateModel::StackedNAR { mean, innovation, .. } => {
                let g = mean.eval(x) + innovation.sample(rng);
                if !g.is_finite() || g.abs() > EXPLOSION_BOUND {
                    return Err(Error::NonStationaryModel(format!(
                        "simulated path diverged (|w| = {}); h does not yield a stationary process",
                        g.abs()
                    )));
                }
                Ok(self.shift_state(x, g))
            }
        }
    }

    fn draw_shock<R: Rng + ?Sized>(&self, x: &[f64], x_next: &[f64], rng: &mut R) -> f64 {
        let (m, v) = self.shock_moments(x, x_next);
        let z: f64 = StandardNormal.sample(rng);
        m + v.sqrt() * z
    }

    fn chain_index(&self, x: &[f64]) -> Result<usize> {
        match self {
            StateModel::DiscreteChain { states, .. } => states
                .iter()
                .position(|s| *s == x[0])
                .ok_or_else(|| Error::PathOffGrid(x.to_vec())),
            _ => Ok(0),
        }
    }
}

fn normalize_log(logp: &[f64]) -> Vec<f64> {
    let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logp.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Linear-interpolation stencil of `v` on a sorted axis; exact node hits give one
/// entry. The flag reports clamping to the hull.
fn locate(axis: &[f64], v: f64) -> (Vec<(usize, f64)>, bool) {
    let n = axis.len();
    let h = (axis[n - 1] - axis[0]) / (n - 1) as f64;
    let tol = 1e-9 * h;
    if v <= axis[0] + tol {
        return (vec![(0, 1.0)], v < axis[0] - tol);
    }
    if v >= axis[n - 1] - tol {
        return (vec![(n - 1, 1.0)], v > axis[n - 1] + tol);
    }
    let hi = axis.partition_point(|a| *a < v);
    if (axis[hi] - v).abs() <= tol {
        return (vec![(hi, 1.0)], false);
    }
    let lo = hi - 1;
    if (v - axis[lo]).abs() <= tol {
        return (vec![(lo, 1.0)], false);
    }
    let t = (v - axis[lo]) / (axis[hi] - axis[lo]);
    (vec![(lo, 1.0 - t), (hi, t)], false)
}

/// How grid points relate to the model's transition law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridLayout {
    /// Arbitrary points; only operators given explicitly as matrices.
    Scattered,
    /// One-dimensional nodes with `ln` of their Lebesgue quadrature weights.
    Nodes { log_measure: Vec<f64> },
    /// Tensor product of one shared uniform axis, row-major with coordinate 0 slowest.
    Tensor { axis: Vec<f64>, log_measure: Vec<f64> },
}

/// Quadrature grid for the stationary law `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    /// Row-major `n × dim` coordinates.
    points: Vec<f64>,
    weights: Vec<f64>,
    layout: GridLayout,
}

impl Grid {
    /// Grid from explicit points and probability weights.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidGrid("points have mixed dimensions".into()));
        }
        let flat = points.into_iter().flatten().collect();
        Self::from_parts(dim, flat, weights, GridLayout::Scattered)
    }

    /// Grid with equal weights `1/n`.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    pub(crate) fn from_parts(dim: usize, points: Vec<f64>, mut weights: Vec<f64>, layout: GridLayout) -> Result<Self> {
        let n = weights.len();
        if n == 0 || dim == 0 || points.len() != n * dim {
            return Err(Error::InvalidGrid(format!("{} coordinates for {n} weights", points.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidGrid("weights must be nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGrid(format!("weights sum to {s}")));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        let mut order: Vec<usize> = (0..n).collect();
        let pt = |i: usize| &points[i * dim..(i + 1) * dim];
        order.sort_by(|&i, &j| {
            pt(i).iter().zip(pt(j)).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        if order.windows(2).any(|w| pt(w[0]) == pt(w[1])) {
            return Err(Error::InvalidGrid("grid points must be pairwise distinct".into()));
        }
        Ok(Self { dim, points, weights, layout })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.dim)
    }

    /// Coordinate `k` of every grid point.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.points().map(|p| p[k]).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    /// Same points and layout with replacement weights (renormalized).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: weights.len() });
        }
        let s: f64 = weights.iter().sum();
        let w = weights.iter().map(|v| v / s).collect();
        Self::from_parts(self.dim, self.points.clone(), w, self.layout.clone())
    }

    pub fn find_point(&self, x: &[f64]) -> Option<usize> {
        self.points().position(|p| p == x)
    }
}

/// Grid whose weights approximate the stationary law `Q` of `model`.
///
/// - `DiscreteChain`: the chain's states with the exact left Perron vector (`n_points` unused).
/// - `GaussianAR1` / `OUSkeleton`: `n_points`-node Gauss–Hermite rule for `N(0, σ²/(1−a²))`,
///   without the nodes beyond ± 8 sd (their mass is below 1e-14).
/// - `StackedNAR`: tensor grid with `n_points` per dimension on one uniform axis spanning
///   the pilot-simulated mean ± 8 sd; weights are the stationary vector of the discretized
///   transition chain on that grid.
pub fn stationary_grid(model: &StateModel, n_points: usize) -> Result<Grid> {
    stationary_grid_truncated(model, n_points, TRUNCATION_SDS)
}

/// [`stationary_grid`] with the stacked axis spanning mean ± `truncation` sd.
pub fn stationary_grid_truncated(model: &StateModel, n_points: usize, truncation: f64) -> Result<Grid> {
    model.validate()?;
    if !(truncation > 0.0 && truncation.is_finite()) {
        return Err(Error::InvalidGrid(format!("truncation must be positive, got {truncation}")));
    }
    if n_points < 2 {
        return Err(Error::DegenerateGrid(n_points));
    }
    match model {
        StateModel::DiscreteChain { transition, states } => {
            let pi = chain_stationary(transition)?;
            Grid::from_parts(1, states.clone(), pi, GridLayout::Scattered)
        }
        StateModel::GaussianAR1 { .. } | StateModel::OUSkeleton { .. } => {
            let sd = model.stationary_sd().unwrap();
            let (nodes, probs, log_measure) = normal_rule(n_points, 0.0, sd);
            let keep: Vec<usize> = (0..n_points).filter(|&i| nodes[i].abs() <= truncation * sd).collect();
            if keep.len() < 2 {
                return Err(Error::DegenerateGrid(keep.len()));
            }
            let s: f64 = keep.iter().map(|&i| probs[i]).sum();
            Grid::from_parts(
                1,
                keep.iter().map(|&i| nodes[i]).collect(),
                keep.iter().map(|&i| probs[i] / s).collect(),
                GridLayout::Nodes { log_measure: keep.iter().map(|&i| log_measure[i]).collect() },
            )
        }
        StateModel::StackedNAR { order, .. } => {
            let (mean, sd) = pilot_moments(model)?;
            let lo = mean - truncation * sd;
            let hi = mean + truncation * sd;
            let h = (hi - lo) / (n_points - 1) as f64;
            let axis: Vec<f64> = (0..n_points).map(|i| lo + h * i as f64).collect();
            let log_measure: Vec<f64> = (0..n_points)
                .map(|i| if i == 0 || i == n_points - 1 { (0.5 * h).ln() } else { h.ln() })
                .collect();
            let n = n_points.pow(*order as u32);
            let mut pts = Vec::with_capacity(n * order);
            for idx in 0..n {
                let mut rem = idx;
                let mut coords = vec![0.0; *order];
                for k in (0..*order).rev() {
                    coords[k] = axis[rem % n_points];
                    rem /= n_points;
                }
                pts.extend(coords);
            }
            let provisional = Grid::from_parts(
                *order,
                pts,
                vec![1.0 / n as f64; n],
                GridLayout::Tensor { axis, log_measure },
            )?;
            let (kernel, _) = model.unit_transition(&provisional)?;
            let pi = sparse_stationary(&kernel)?;
            provisional.with_weights(pi)
        }
    }
}

/// Left Perron vector of a row-stochastic matrix; errors unless exactly one
/// closed communicating class exists.
pub fn chain_stationary(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = transition.len();
    let p = DMatrix::from_fn(n, n, |i, j| transition[i][j]);
    let closed = BoolMatrix::from_dense(&p, 0.0).closed_classes();
    if closed.len() != 1 {
        return Err(Error::NonStationaryModel(format!(
            "chain has {} closed classes, so no unique stationary vector",
            closed.len()
        )));
    }
    // (Pᵀ − I)π = 0 with the last equation replaced by Σπ = 1.
    let mut a = p.transpose() - DMatrix::identity(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NonStationaryModel("singular stationary system".into()))?;
    let pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    Ok(pi.into_iter().map(|v| v / s).collect())
}

fn sparse_stationary(kernel: &Csr) -> Result<Vec<f64>> {
    let n = kernel.n_rows();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        kernel.left_mul(&pi, &mut next);
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= s);
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < 1e-15 {
            return Ok(pi);
        }
    }
    Err(Error::NonStationaryModel("discretized chain did not reach its stationary vector".into()))
}

fn pilot_moments(model: &StateModel) -> Result<(f64, f64)> {
    let path = simulate_path(model, PILOT_SEED, PILOT_LENGTH)?;
    let n = path.states.len() as f64;
    let mean = path.states.iter().map(|s| s[0]).sum::<f64>() / n;
    let var = path.states.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var.is_finite() && var > 0.0) {
        return Err(Error::NonStationaryModel(format!("pilot variance {var}")));
    }
    Ok((mean, var.sqrt()))
}

/// Empirical stationary weights on a tensor grid: long simulation, each state
/// assigned to its nearest grid point.
pub fn histogram_weights(model: &StateModel, grid: &Grid, seed: u64, length: usize) -> Result<Vec<f64>> {
    let GridLayout::Tensor { axis, .. } = grid.layout() else {
        return Err(Error::InvalidGrid("histogram weights need a tensor grid".into()));
    };
    let path = simulate_path(model, seed, length)?;
    let n_axis = axis.len();
    let nearest = |v: f64| {
        let hi = axis.partition_point(|a| *a < v).min(n_axis - 1);
        if hi > 0 && (v - axis[hi - 1]).abs() <= (axis[hi] - v).abs() {
            hi - 1
        } else {
            hi
        }
    };
    let mut counts = vec![0.0; grid.len()];
    for s in &path.states {
        let idx = s.iter().fold(0usize, |acc, &v| acc * n_axis + nearest(v));
        counts[idx] += 1.0;
    }
    let total = path.states.len() as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// Description of the one-step transition law.
#[derive(Debug, Clone)]
pub struct TransitionStructure {
    model: StateModel,
    /// Some coordinates of `X'` are deterministic functions of `X`.
    pub degenerate: bool,
    pub stochastic_coordinates: usize,
    pub deterministic_coordinates: usize,
}

impl TransitionStructure {
    /// `f(x'|x)`: a row probability for chains, a Lebesgue density otherwise,
    /// `None` when the transition has deterministic coordinates.
    pub fn density(&self, x: &[f64], x_next: &[f64]) -> Option<f64> {
        match &self.model {
            StateModel::DiscreteChain { transition, states } => {
                let i = states.iter().position(|s| *s == x[0])?;
                let j = states.iter().position(|s| *s == x_next[0])?;
                Some(transition[i][j])
            }
            StateModel::GaussianAR1 { .. } | StateModel::OUSkeleton { .. } => {
                let (a, s) = self.model.ar1_parameters().unwrap();
                Some(Innovation::Gaussian { sd: s }.density(x_next[0] - a * x[0]))
            }
            StateModel::StackedNAR { mean, innovation, .. } => {
                if self.degenerate {
                    None
                } else {
                    Some(innovation.density(x_next[0] - mean.eval(x)))
                }
            }
        }
    }

    /// Smallest horizon at which the transition has a conditional density.
    pub fn density_horizon(&self) -> usize {
        self.deterministic_coordinates + 1
    }
}

pub fn transition_structure(model: &StateModel) -> Result<TransitionStructure> {
    model.validate()?;
    let dim = model.dim();
    let deterministic = if matches!(model, StateModel::StackedNAR { .. }) { dim - 1 } else { 0 };
    Ok(TransitionStructure {
        model: model.clone(),
        degenerate: deterministic > 0,
        stochastic_coordinates: dim - deterministic,
        deterministic_coordinates: deterministic,
    })
}

/// Simulated states `X₀…X_T` and auxiliary shocks `Y₁…Y_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub states: Vec<Vec<f64>>,
    pub shocks: Vec<f64>,
    pub seed: u64,
}

/// Path of `length` transitions from a stationary start.
pub fn simulate_path(model: &StateModel, seed: u64, length: usize) -> Result<PathSample> {
    simulate_path_on_stream(model, seed, stream::PATH, length)
}

/// Stationary-start path drawn from child stream `purpose` of `seed`.
pub fn simulate_path_on_stream(model: &StateModel, seed: u64, purpose: u64, length: usize) -> Result<PathSample> {
    model.validate()?;
    let mut rng = SeedTree::new(seed).child(purpose);
    let start = match model {
        StateModel::DiscreteChain { transition, states } => {
            let pi = chain_stationary(transition)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = pi.iter().rposition(|p| *p > 0.0).unwrap();
            for (i, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc && *p > 0.0 {
                    pick = i;
                    break;
                }
            }
            vec![states[pick]]
        }
        StateModel::GaussianAR1 { .. } | StateModel::OUSkeleton { .. } => {
            let z: f64 = StandardNormal.sample(&mut rng);
            vec![model.stationary_sd().unwrap() * z]
        }
        StateModel::StackedNAR { order, .. } => {
            let mut x = vec![0.0; *order];
            let mut idx = 0;
            for _ in 0..BURN_IN {
                x = model.step(&x, &mut idx, &mut rng)?;
            }
            x
        }
    };
    run_path(model, seed, length, start, rng)
}

/// Path of `length` transitions from a given start state.
pub fn simulate_path_from(model: &StateModel, seed: u64, length: usize, start: &[f64]) -> Result<PathSample> {
    model.validate()?;
    if start.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: start.len() });
    }
    let rng = SeedTree::new(seed).child(stream::PATH);
    run_path(model, seed, length, start.to_vec(), rng)
}

fn run_path(model: &StateModel, seed: u64, length: usize, start: Vec<f64>, mut rng: ChaCha8Rng) -> Result<PathSample> {
    if length == 0 {
        return Err(Error::InvalidModel("path length must be at least 1".into()));
    }
    let mut chain_idx = model.chain_index(&start)?;
    let mut states = Vec::with_capacity(length + 1);
    let mut shocks = Vec::with_capacity(length);
    states.push(start);
    for t in 0..length {
        let x = &states[t];
        let next = model.step(x, &mut chain_idx, &mut rng)?;
        shocks.push(model.draw_shock(x, &next, &mut rng));
        states.push(next);
    }
    Ok(PathSample { states, shocks, seed })
}
