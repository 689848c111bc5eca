//! External habit formation: the Euler-equation operator
//! `Tψ(x) = E[exp(−γg′)·R(x, g′)·ψ(X′) | X = x]` and recovery of `(β, h)` from
//! its Perron pair.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{build_pricing_operator, DiscreteOperator, SdfSpec, ShockLaw};
use crate::spectral::{dominant_eigenpair, full_spectrum_oracle_with, OracleConfig, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::statemodels::{Grid, StateModel};
use crate::weighted_norm;

/// Conditional expected gross return `R(x, g′)`.
pub type ReturnFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct HabitModel {
    pub gamma: f64,
    pub ell: usize,
    pub growth_model: StateModel,
    pub return_fn: ReturnFn,
}

impl fmt::Debug for HabitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HabitModel")
            .field("gamma", &self.gamma)
            .field("ell", &self.ell)
            .field("growth_model", &self.growth_model)
            .finish_non_exhaustive()
    }
}

impl HabitModel {
    pub fn new(gamma: f64, growth_model: StateModel, return_fn: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let hm = Self { gamma, ell: growth_model.dim(), growth_model, return_fn: Arc::new(return_fn) };
        hm.validate()?;
        Ok(hm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidModel(format!("risk aversion must be ≥ 0, got {}", self.gamma)));
        }
        if !matches!(self.growth_model, StateModel::StackedNAR { .. }) {
            return Err(Error::InvalidModel("habit growth model must be a stacked nonlinear AR".into()));
        }
        if self.ell != self.growth_model.dim() || self.ell == 0 {
            return Err(Error::InvalidModel(format!("habit lag {} does not match growth order {}", self.ell, self.growth_model.dim())));
        }
        self.growth_model.validate()
    }

    /// The habit SDF `m(x, x′) = exp(−γ·x′₀)·R(x, x′₀)`; a nonpositive return
    /// surfaces as `NegativeSdf` when the operator is built.
    pub fn sdf(&self) -> SdfSpec {
        let gamma = self.gamma;
        let r = Arc::clone(&self.return_fn);
        SdfSpec::custom(
            "Habit",
            move |x, xn, _| {
                let g = xn[0];
                let ret = r(x, g);
                if ret > 0.0 {
                    (-gamma * g).exp() * ret
                } else {
                    f64::NAN
                }
            },
            ShockLaw::None,
        )
        .with_params(&[("gamma", gamma)])
    }
}

pub fn build_habit_operator(hm: &HabitModel, grid: &Grid) -> Result<DiscreteOperator> {
    hm.validate()?;
    build_pricing_operator(&hm.growth_model, &hm.sdf(), grid, None)
}

/// Excerpt of the spectrum census that certifies uniqueness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessCertificate {
    pub positive_eigenvector_count: usize,
    pub spectral_radius: f64,
    pub perron_root: f64,
    pub is_simple: bool,
    pub is_isolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitSolution {
    pub beta: f64,
    /// Habit transform on the grid, `‖h‖ = 1` in the weighted norm.
    pub h: Vec<f64>,
    pub residual: f64,
    pub uniqueness_certificate: UniquenessCertificate,
}

/// Recovers `β = 1/ρ` and `h = φ`. Uniqueness is certified by the dense
/// oracle first; the adjoint census is skipped.
pub fn recover_habit(op: &DiscreteOperator) -> Result<HabitSolution> {
    recover_habit_with(op, &OracleConfig { adjoint: false, ..OracleConfig::default() })
}

pub fn recover_habit_with(op: &DiscreteOperator, cfg: &OracleConfig) -> Result<HabitSolution> {
    let report = full_spectrum_oracle_with(op, cfg)?;
    if report.positive_eigenvector_count != 1 {
        return Err(Error::UniquenessFailed(report.positive_eigenvector_count));
    }
    let pair = dominant_eigenpair(op, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    Ok(HabitSolution {
        beta: 1.0 / pair.rho,
        h: pair.phi,
        residual: pair.residual,
        uniqueness_certificate: UniquenessCertificate {
            positive_eigenvector_count: report.positive_eigenvector_count,
            spectral_radius: report.spectral_radius,
            perron_root: report.perron_root,
            is_simple: report.is_simple,
            is_isolated: report.is_isolated,
        },
    })
}

/// Returns `R(x, g′) = β₀⁻¹·exp(γg′)·h₀(x)/h₀(x′)` with `x′` the shifted
/// stacked state, so that `(1/β₀, h₀)` is an eigenpair of the habit operator.
pub fn synthesize_consistent_returns(
    h0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    beta0: f64,
    gamma: f64,
    growth_model: StateModel,
) -> Result<HabitModel> {
    let shift_model = growth_model.clone();
    HabitModel::new(gamma, growth_model, move |x, g| {
        let xn = shift_model.shift_state(x, g);
        (gamma * g).exp() * h0(x) / (beta0 * h0(&xn))
    })
}

/// Grid values as a function of the state, by exact node lookup. Off-grid
/// states evaluate to NaN.
pub fn grid_function(values: &[f64], grid: &Grid) -> Result<impl Fn(&[f64]) -> f64 + Send + Sync + 'static> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
    }
    let table: HashMap<Vec<u64>, f64> = grid
        .points()
        .zip(values)
        .map(|(p, v)| (p.iter().map(|c| c.to_bits()).collect(), *v))
        .collect();
    Ok(move |x: &[f64]| {
        let key: Vec<u64> = x.iter().map(|c| c.to_bits()).collect();
        table.get(&key).copied().unwrap_or(f64::NAN)
    })
}

/// `h/‖h‖` in the weighted norm of `grid`.
pub fn normalized(h: &[f64], grid: &Grid) -> Vec<f64> {
    let n = weighted_norm(grid.weights(), h);
    h.iter().map(|v| v / n).collect()
}
