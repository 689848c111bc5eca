//! Run configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::habit::{synthesize_consistent_returns, HabitModel};
use crate::operator::{GrowthMap, SdfSpec};
use crate::spectral::{DEFAULT_DENSE_LIMIT, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::statemodels::{Innovation, MeanFunction, StateModel, TRUNCATION_SDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub sdf: Option<SdfConfig>,
    #[serde(default)]
    pub habit: Option<HabitConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Reference values recorded next to the computed ones in the manifest.
    #[serde(default)]
    pub compare: Option<CompareConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    DiscreteChain {
        transition: Vec<Vec<f64>>,
        #[serde(default)]
        states: Option<Vec<f64>>,
    },
    GaussianAr1 {
        a: f64,
        sigma: f64,
    },
    /// Affine conditional mean `intercept + Σ coeffs[k]·x[k]`; the order is `coeffs.len()`.
    StackedNar {
        intercept: f64,
        coeffs: Vec<f64>,
        innovation: Innovation,
    },
    OuSkeleton {
        kappa: f64,
        sigma: f64,
        tau: f64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<StateModel> {
        match self {
            ModelConfig::DiscreteChain { transition, states } => match states {
                Some(s) => StateModel::discrete_chain_with_states(transition.clone(), s.clone()),
                None => StateModel::discrete_chain(transition.clone()),
            },
            ModelConfig::GaussianAr1 { a, sigma } => StateModel::gaussian_ar1(*a, *sigma),
            ModelConfig::StackedNar { intercept, coeffs, innovation } => {
                StateModel::stacked_nar(coeffs.len(), MeanFunction::affine(*intercept, coeffs.clone()), *innovation)
            }
            ModelConfig::OuSkeleton { kappa, sigma, tau } => StateModel::ou_skeleton(*kappa, *sigma, *tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SdfConfig {
    Unit,
    Constant {
        beta: f64,
    },
    /// `β·exp(−γ·g)` with `g = x′₀ + shock_scale·y`.
    Ccapm {
        beta: f64,
        gamma: f64,
        #[serde(default)]
        shock_scale: Option<f64>,
    },
    ShortRate {
        delta: f64,
        lambda: f64,
    },
}

impl SdfConfig {
    pub fn build(&self, model: &StateModel) -> Result<SdfSpec> {
        Ok(match self {
            SdfConfig::Unit => SdfSpec::unit(),
            SdfConfig::Constant { beta } => SdfSpec::constant(*beta),
            SdfConfig::Ccapm { beta, gamma, shock_scale } => {
                let growth = match shock_scale {
                    Some(scale) => GrowthMap::NextStatePlusShock { scale: *scale },
                    None => GrowthMap::NextState,
                };
                SdfSpec::ccapm(*beta, *gamma, growth)
            }
            SdfConfig::ShortRate { delta, lambda } => match model {
                StateModel::OUSkeleton { tau, .. } => SdfSpec::short_rate(*delta, *lambda, *tau),
                _ => return Err(Error::Config("short_rate SDF needs an ou_skeleton model".into())),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HabitConfig {
    pub gamma: f64,
    pub returns: ReturnsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReturnsConfig {
    Constant {
        value: f64,
    },
    /// `R(x, g′) = intercept + Σ state_coeffs[k]·x[k] + growth_coeff·g′`.
    Affine {
        intercept: f64,
        state_coeffs: Vec<f64>,
        growth_coeff: f64,
    },
    /// Returns consistent with `β₀` and `h₀(x) = exp(Σ h0_log_coeffs[k]·x[k])`.
    Synthesized {
        beta0: f64,
        h0_log_coeffs: Vec<f64>,
    },
}

impl HabitConfig {
    pub fn build(&self, growth: &StateModel) -> Result<HabitModel> {
        let gamma = self.gamma;
        match &self.returns {
            ReturnsConfig::Constant { value } => {
                let v = *value;
                HabitModel::new(gamma, growth.clone(), move |_, _| v)
            }
            ReturnsConfig::Affine { intercept, state_coeffs, growth_coeff } => {
                if state_coeffs.len() != growth.dim() {
                    return Err(Error::Config(format!("state_coeffs needs {} entries", growth.dim())));
                }
                let (c, s, g) = (*intercept, state_coeffs.clone(), *growth_coeff);
                HabitModel::new(gamma, growth.clone(), move |x, gn| {
                    c + s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + g * gn
                })
            }
            ReturnsConfig::Synthesized { beta0, h0_log_coeffs } => {
                if h0_log_coeffs.len() != growth.dim() {
                    return Err(Error::Config(format!("h0_log_coeffs needs {} entries", growth.dim())));
                }
                if *beta0 <= 0.0 {
                    return Err(Error::Config("beta0 must be positive".into()));
                }
                let b = h0_log_coeffs.clone();
                synthesize_consistent_returns(move |x| b.iter().zip(x).map(|(a, v)| a * v).sum::<f64>().exp(), *beta0, gamma, growth.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per dimension (ignored for discrete chains).
    pub points: usize,
    /// Half-width of stacked axes in stationary standard deviations.
    pub truncation: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 64, truncation: TRUNCATION_SDS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub dense_limit: usize,
    pub mc_draws: Option<usize>,
    /// Run the adjoint eigenvector census in the dense oracle.
    pub adjoint_census: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, dense_limit: DEFAULT_DENSE_LIMIT, mc_draws: None, adjoint_census: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Positivity,
    EventualStrongPositivity,
    Irreducibility,
    NoArbitrage,
    PowerCompactness,
    YieldNondegeneracy,
    DegenerateTransition,
    KernelPositivityAb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    pub run: Vec<CheckKind>,
    pub esp_n_max: usize,
    pub irreducibility_n_max: usize,
    pub no_arbitrage_horizon: usize,
    pub no_arbitrage_samples: usize,
    pub compactness_horizon: usize,
    pub yield_n_max: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            run: vec![CheckKind::Positivity, CheckKind::EventualStrongPositivity, CheckKind::YieldNondegeneracy],
            esp_n_max: 8,
            irreducibility_n_max: 8,
            no_arbitrage_horizon: 1,
            no_arbitrage_samples: 10_000,
            compactness_horizon: 2,
            yield_n_max: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Table formats; CSV tables are always written, JSON copies on request.
    pub formats: Vec<Format>,
    pub yield_horizons: usize,
    pub long_run_horizons: usize,
    /// Transitions in the simulated decomposition path.
    pub path_length: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![Format::Csv], yield_horizons: 200, long_run_horizons: 200, path_length: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
}

impl RunConfig {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json { Self::from_json(&text)? } else { Self::from_toml(&text)? };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.sdf, &self.habit) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [sdf] or [habit], not both".into())),
            (None, None) => return Err(Error::Config("one of [sdf] or [habit] is required".into())),
            _ => {}
        }
        if self.habit.is_some() && !matches!(self.model, ModelConfig::StackedNar { .. }) {
            return Err(Error::Config("[habit] needs a stacked_nar model".into()));
        }
        if self.grid.points < 2 {
            return Err(Error::Config(format!("grid.points must be ≥ 2, got {}", self.grid.points)));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config("solver.tol must be positive and solver.max_iter nonzero".into()));
        }
        Ok(())
    }

    /// Canonical serialization hashed into the manifest.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
