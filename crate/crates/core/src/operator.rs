//! SDF specifications and discretized pricing operators on the weighted grid
//! space approximating `L²(Q)`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, SeedTree};
use crate::sparse::Csr;
use crate::statemodels::{transition_structure, Grid, StateModel};

/// Default number of Monte Carlo draws for the inner expectation over `Y'`.
pub const DEFAULT_MC_DRAWS: usize = 4096;

pub type SdfFn = Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>;

/// How the auxiliary shock `Y'` enters the SDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShockLaw {
    /// `m` does not depend on `y`.
    None,
    /// `Y'` follows the model's auxiliary law and `m` is log-linear in `y` with
    /// the given loading, so `E[m | x, x'] = m(x, x', μ)·exp(b²v/2)`.
    LogLinear { loading: f64 },
    /// `Y'` follows the model's auxiliary law; antithetic Monte Carlo.
    MonteCarlo,
}

/// Consumption-growth map of the C-CAPM preset.
#[derive(Clone)]
pub enum GrowthMap {
    /// `g = x'₀`.
    NextState,
    /// `g = x'₀ + scale·y`.
    NextStatePlusShock { scale: f64 },
    Custom(Arc<dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync>),
}

impl GrowthMap {
    pub fn eval(&self, x: &[f64], x_next: &[f64], y: f64) -> f64 {
        match self {
            GrowthMap::NextState => x_next[0],
            GrowthMap::NextStatePlusShock { scale } => x_next[0] + scale * y,
            GrowthMap::Custom(g) => g(x, x_next, y),
        }
    }
}

/// One-period stochastic discount factor `m(x, x', y)` and the law of `Y'`.
#[derive(Clone)]
pub struct SdfSpec {
    name: String,
    params: Vec<(String, f64)>,
    m: SdfFn,
    shock_law: ShockLaw,
}

impl fmt::Debug for SdfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdfSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("shock_law", &self.shock_law)
            .finish()
    }
}

impl SdfSpec {
    pub fn custom(
        name: impl Into<String>,
        m: impl Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
        shock_law: ShockLaw,
    ) -> Self {
        Self { name: name.into(), params: Vec::new(), m: Arc::new(m), shock_law }
    }

    /// `m ≡ 1`: the pricing operator is the transition operator.
    pub fn unit() -> Self {
        Self::custom("UnitSDF", |_, _, _| 1.0, ShockLaw::None)
    }

    /// `m ≡ β`.
    pub fn constant(beta: f64) -> Self {
        Self::custom("ConstantSDF", move |_, _, _| beta, ShockLaw::None).with_params(&[("beta", beta)])
    }

    /// `m = β·exp(−γ·g(x, x', y))`.
    pub fn ccapm(beta: f64, gamma: f64, growth: GrowthMap) -> Self {
        let shock_law = match growth {
            GrowthMap::NextState => ShockLaw::None,
            GrowthMap::NextStatePlusShock { scale } => ShockLaw::LogLinear { loading: -gamma * scale },
            GrowthMap::Custom(_) => ShockLaw::MonteCarlo,
        };
        let mut params = vec![("beta", beta), ("gamma", gamma)];
        if let GrowthMap::NextStatePlusShock { scale } = growth {
            params.push(("shock_scale", scale));
        }
        let g = growth.clone();
        Self::custom("CCAPM", move |x, xn, y| beta * (-gamma * g.eval(x, xn, y)).exp(), shock_law)
            .with_params(&params)
    }

    /// Short-rate SDF of a sampled OU factor: `m = exp(−δτ − λ·∫Z ds)`, with
    /// `Y'` the integrated factor over the sampling interval.
    pub fn short_rate(delta: f64, lambda: f64, tau: f64) -> Self {
        Self::custom("ShortRate", move |_, _, y| (-delta * tau - lambda * y).exp(), ShockLaw::LogLinear { loading: -lambda })
            .with_params(&[("delta", delta), ("lambda", lambda), ("tau", tau)])
    }

    pub fn with_params(mut self, params: &[(&str, f64)]) -> Self {
        self.params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn shock_law(&self) -> ShockLaw {
        self.shock_law
    }

    pub fn eval(&self, x: &[f64], x_next: &[f64], y: f64) -> f64 {
        (self.m)(x, x_next, y)
    }

    /// Same SDF scaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let m = self.m.clone();
        let mut params = self.params.clone();
        params.push(("scale".into(), c));
        Self { name: self.name.clone(), params, m: Arc::new(move |x, xn, y| c * m(x, xn, y)), shock_law: self.shock_law }
    }

    /// `E[m | x, x']` and its Monte Carlo standard error (zero when exact).
    pub(crate) fn conditional_mean(&self, model: &StateModel, x: &[f64], x_next: &[f64], draws: &[f64]) -> Result<(f64, f64)> {
        let check = |v: f64| {
            if v < 0.0 || v.is_nan() {
                Err(Error::NegativeSdf { value: v, x: x.to_vec(), x_next: x_next.to_vec() })
            } else {
                Ok(v)
            }
        };
        match self.shock_law {
            ShockLaw::None => Ok((check(self.eval(x, x_next, 0.0))?, 0.0)),
            ShockLaw::LogLinear { loading } => {
                let (mu, var) = model.shock_moments(x, x_next);
                let base = check(self.eval(x, x_next, mu))?;
                Ok((base * (0.5 * loading * loading * var).exp(), 0.0))
            }
            ShockLaw::MonteCarlo => {
                let (mu, var) = model.shock_moments(x, x_next);
                let sd = var.sqrt();
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for &z in draws {
                    let pair = 0.5
                        * (check(self.eval(x, x_next, mu + sd * z))? + check(self.eval(x, x_next, mu - sd * z))?);
                    sum += pair;
                    sum_sq += pair * pair;
                }
                let k = draws.len() as f64;
                let mean = sum / k;
                let var_pair = (sum_sq / k - mean * mean).max(0.0) * k / (k - 1.0).max(1.0);
                Ok((mean, (var_pair / k).sqrt()))
            }
        }
    }
}

/// Construction record of an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OperatorMeta {
    pub model: String,
    pub sdf: String,
    pub sdf_params: Vec<(String, f64)>,
    pub horizon: usize,
    pub mc_draws: Option<usize>,
    /// Seed of the Monte Carlo draws, when used.
    pub mc_seed: u64,
    /// Largest Monte Carlo standard error of an inner expectation.
    pub mc_standard_error: f64,
    /// Deterministic coordinates clamped to the grid hull during construction.
    pub clamped_coordinates: usize,
}

/// Grid, quadrature-weighted matrix and provenance: `(Tf)ᵢ = Σⱼ Mᵢⱼ fⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    grid: Grid,
    matrix: DMatrix<f64>,
    label: String,
    meta: OperatorMeta,
}

impl DiscreteOperator {
    pub fn from_matrix(grid: Grid, matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: matrix.nrows().max(matrix.ncols()) });
        }
        let meta = OperatorMeta { horizon: 1, ..Default::default() };
        Ok(Self { grid, matrix, label: label.into(), meta })
    }

    /// Operator on uniformly weighted points `0, 1, …, n−1`.
    pub fn from_square(matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let n = matrix.nrows();
        let grid = Grid::uniform((0..n).map(|i| vec![i as f64]).collect())?;
        Self::from_matrix(grid, matrix, label)
    }

    pub fn with_meta(mut self, meta: OperatorMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn meta(&self) -> &OperatorMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `c·T` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            matrix: &self.matrix * c,
            label: format!("{}*{c}", self.label),
            meta: self.meta.clone(),
        }
    }

    /// Matrix entries below zero are clamped to zero (used after a positivity check).
    pub(crate) fn clamp_negative(&mut self) {
        self.matrix.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// Dense Nyström discretization of the pricing operator of `sdf` under `model`.
///
/// For stacked models the deterministic coordinates are shifted exactly and
/// the innovation is integrated on the first axis; shifted coordinates that
/// fall between nodes are linearly interpolated, those outside the hull are
/// clamped and counted. Monte Carlo draws (when the SDF needs them) come from
/// seed 0; see [`build_pricing_operator_seeded`].
pub fn build_pricing_operator(model: &StateModel, sdf: &SdfSpec, grid: &Grid, mc_draws: Option<usize>) -> Result<DiscreteOperator> {
    build_pricing_operator_seeded(model, sdf, grid, mc_draws, 0)
}

pub fn build_pricing_operator_seeded(
    model: &StateModel,
    sdf: &SdfSpec,
    grid: &Grid,
    mc_draws: Option<usize>,
    seed: u64,
) -> Result<DiscreteOperator> {
    let (kernel, meta) = pricing_kernel(model, sdf, grid, mc_draws, seed)?;
    let label = format!("{}/{}", model.kind_name(), sdf.name());
    Ok(DiscreteOperator { grid: grid.clone(), matrix: kernel.to_dense(), label, meta })
}

/// Draws `z` for antithetic pairs `(z, −z)`, shared by every row.
pub(crate) fn antithetic_draws(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedTree::new(seed).child(stream::MC_SHOCKS);
    (0..n.div_ceil(2).max(1)).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub(crate) fn pricing_kernel(
    model: &StateModel,
    sdf: &SdfSpec,
    grid: &Grid,
    mc_draws: Option<usize>,
    seed: u64,
) -> Result<(Csr, OperatorMeta)> {
    model.validate()?;
    let draws = match sdf.shock_law() {
        ShockLaw::MonteCarlo => {
            let n = mc_draws.unwrap_or(DEFAULT_MC_DRAWS);
            Some(antithetic_draws(n, seed))
        }
        _ => None,
    };
    let draw_slice = draws.as_deref().unwrap_or(&[]);
    let rows: Vec<Result<(Vec<(usize, f64)>, usize, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let mut entries = Vec::new();
            let mut err = None;
            let mut se_max = 0.0f64;
            let clamped = model.visit_transitions(grid, x, |p, xn, stencil| {
                if err.is_some() {
                    return;
                }
                match sdf.conditional_mean(model, x, xn, draw_slice) {
                    Ok((e, se)) => {
                        se_max = se_max.max(se);
                        entries.extend(stencil.iter().map(|&(j, w)| (j, p * e * w)));
                    }
                    Err(e) => err = Some(e),
                }
            })?;
            match err {
                Some(e) => Err(e),
                None => Ok((entries, clamped, se_max)),
            }
        })
        .collect();
    let mut csr = Csr::with_cols(grid.len());
    let mut clamped = 0;
    let mut se = 0.0f64;
    for row in rows {
        let (mut entries, c, s) = row?;
        clamped += c;
        se = se.max(s);
        csr.push_row(&mut entries);
    }
    if clamped > 0 {
        tracing::warn!(clamped, "shifted stacked coordinates clamped to the grid hull");
    }
    let meta = OperatorMeta {
        model: model.kind_name().into(),
        sdf: sdf.name().into(),
        sdf_params: sdf.params().to_vec(),
        horizon: 1,
        mc_draws: draws.as_ref().map(|d| 2 * d.len()),
        mc_seed: seed,
        mc_standard_error: se,
        clamped_coordinates: clamped,
    };
    Ok((csr, meta))
}

/// `(Tf)ᵢ = Σⱼ Mᵢⱼ fⱼ`.
pub fn apply(op: &DiscreteOperator, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != op.len() {
        return Err(Error::DimensionMismatch { expected: op.len(), got: f.len() });
    }
    let m = &op.matrix;
    Ok((0..op.len()).map(|i| m.row(i).iter().zip(f).map(|(a, b)| a * b).sum()).collect())
}

/// `Tⁿ` by repeated squaring.
pub fn compose_n(op: &DiscreteOperator, n: usize) -> Result<DiscreteOperator> {
    if n == 0 {
        return Err(Error::InvalidModel("compose_n needs n ≥ 1".into()));
    }
    let mut result: Option<DMatrix<f64>> = None;
    let mut base = op.matrix.clone();
    let mut k = n;
    loop {
        if k & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => &r * &base,
            });
        }
        k >>= 1;
        if k == 0 {
            break;
        }
        base = &base * &base;
    }
    let mut meta = op.meta.clone();
    meta.horizon = op.meta.horizon.max(1) * n;
    Ok(DiscreteOperator {
        grid: op.grid.clone(),
        matrix: result.unwrap(),
        label: format!("{}^{n}", op.label),
        meta,
    })
}

/// Weighted transpose `A = W⁻¹ Mᵀ W`, so `Σ wᵢ gᵢ (Tf)ᵢ = Σ wᵢ (Ag)ᵢ fᵢ`.
pub fn adjoint(op: &DiscreteOperator) -> Result<DiscreteOperator> {
    let w = op.grid.weights();
    if let Some(i) = w.iter().position(|v| *v <= 0.0) {
        return Err(Error::ZeroWeight(i));
    }
    let n = op.len();
    let m = &op.matrix;
    let a = DMatrix::from_fn(n, n, |i, j| m[(j, i)] * w[j] / w[i]);
    let label = match op.label.strip_suffix('*') {
        Some(base) => base.to_string(),
        None => format!("{}*", op.label),
    };
    Ok(DiscreteOperator { grid: op.grid.clone(), matrix: a, label, meta: op.meta.clone() })
}

/// Value of the Hilbert–Schmidt integral at some horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum HsValue {
    Finite(f64),
    /// The transition has deterministic coordinates at this horizon, so no conditional density exists.
    DegenerateFlag,
}

impl HsValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            HsValue::Finite(v) => Some(*v),
            HsValue::DegenerateFlag => None,
        }
    }
}

/// Quadrature of `∫∫ k_ℓ(x, y)² dQ(x) dQ(y)` for the `steps`-step pricing kernel
/// `k_ℓ = E[m⋯m | x, y]·f(y|x)/q(y)`.
///
/// With `K` the discretized `steps`-step operator, `Kᵢⱼ ≈ k(xᵢ, xⱼ)·wⱼ`, so the
/// integral is `Σᵢ wᵢ Σⱼ Kᵢⱼ²/wⱼ`.
pub fn hs_integral(model: &StateModel, sdf: &SdfSpec, grid: &Grid, steps: usize) -> Result<HsValue> {
    if steps == 0 {
        return Err(Error::InvalidModel("hs_integral needs steps ≥ 1".into()));
    }
    if steps < transition_structure(model)?.density_horizon() {
        return Ok(HsValue::DegenerateFlag);
    }
    let (kernel, _) = pricing_kernel(model, sdf, grid, None, 0)?;
    Ok(HsValue::Finite(sparse_hs(&kernel, grid.weights(), steps)))
}

/// `Σᵢ wᵢ Σⱼ (Mⁿ)ᵢⱼ²/wⱼ` for a dense operator.
pub fn hs_norm_sq(op: &DiscreteOperator, steps: usize) -> Result<f64> {
    let k = compose_n(op, steps)?;
    let w = op.grid.weights();
    let mut total = 0.0;
    for i in 0..op.len() {
        for j in 0..op.len() {
            let v = k.matrix[(i, j)];
            if v != 0.0 {
                total += w[i] * v * v / w[j];
            }
        }
    }
    Ok(total)
}

fn sparse_hs(kernel: &Csr, w: &[f64], steps: usize) -> f64 {
    let n = kernel.n_rows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = vec![0.0; n];
            let mut next = vec![0.0; n];
            v[i] = 1.0;
            for _ in 0..steps {
                kernel.left_mul(&v, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
            let row: f64 = v
                .iter()
                .zip(w)
                .filter(|(k, _)| **k != 0.0)
                .map(|(k, wj)| if *wj > 0.0 { k * k / wj } else { f64::INFINITY })
                .sum();
            w[i] * row
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    label: String,
    grid: Grid,
    meta: OperatorMeta,
}

/// Writes `<stem>.csv` (matrix rows) and `<stem>.json` (grid, label, metadata).
pub fn write_operator(op: &DiscreteOperator, dir: &Path, stem: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record((0..op.len()).map(|j| format!("c{j}")))?;
    for i in 0..op.len() {
        w.write_record(op.matrix.row(i).iter().map(|v| crate::io::fmt_f64(*v)))?;
    }
    w.flush()?;
    let side = Sidecar { label: op.label.clone(), grid: op.grid.clone(), meta: op.meta.clone() };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_operator(dir: &Path, stem: &str) -> Result<DiscreteOperator> {
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let mut r = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
    let n = side.grid.len();
    let mut data = Vec::with_capacity(n * n);
    for rec in r.records() {
        for v in rec?.iter() {
            data.push(v.parse::<f64>().map_err(|e| Error::Config(format!("bad matrix entry {v}: {e}")))?);
        }
    }
    if data.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
    }
    let matrix = DMatrix::from_row_slice(n, n, &data);
    Ok(DiscreteOperator { grid: side.grid, matrix, label: side.label, meta: side.meta })
}
