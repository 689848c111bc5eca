//! Discretized positive pricing operators for Markov asset-pricing and
//! habit-formation models.
//!
//! The crate builds Nyström-type discretizations `(Tψ)(xᵢ) = Σⱼ Mᵢⱼ ψ(xⱼ)` of
//! one-period pricing operators `Tψ(x) = E[m(X, X', Y') ψ(X') | X = x]` on a
//! quadrature grid for the stationary law `Q`, computes the principal
//! eigenpair `(ρ, φ)` together with the adjoint eigenfunction `φ*`, checks the
//! positivity / irreducibility / compactness conditions that make `φ` unique,
//! and produces bond prices, yield curves, long-horizon pricing limits and the
//! permanent/transitory decomposition of the SDF.
//!
//! Module map:
//!
//! - [`statemodels`]: state processes, stationary grids, transition structure, simulation
//! - [`operator`]: SDF specifications and discretized pricing operators
//! - [`spectral`]: power iteration and the dense spectrum oracle
//! - [`conditions`]: machine-checked identification conditions
//! - [`pricing`]: yield curves, long-run limits, SDF decomposition
//! - [`habit`]: external habit formation (Euler-equation operator)
//! - [`pipeline`]: configuration-driven runs that write reproducible artifacts

pub mod conditions;
pub mod config;
pub mod error;
pub mod habit;
pub mod io;
pub mod operator;
pub mod pattern;
pub mod pipeline;
pub mod pricing;
pub mod quadrature;
pub(crate) mod sparse;
pub mod rng;
pub mod spectral;
pub mod statemodels;

pub use error::{Error, Result};
pub use conditions::{ConditionId, ConditionReport, Verdict};
pub use operator::{build_pricing_operator, DiscreteOperator, SdfSpec};
pub use spectral::{dominant_eigenpair, full_spectrum_oracle, Eigenpair, SpectrumReport};
pub use statemodels::{stationary_grid, Grid, PathSample, StateModel};

/// Weighted inner product `Σᵢ wᵢ fᵢ gᵢ` on a grid, i.e. the `L²(Q)` pairing.
pub fn weighted_dot(weights: &[f64], f: &[f64], g: &[f64]) -> f64 {
    weights
        .iter()
        .zip(f.iter().zip(g))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

/// Weighted `L²(Q)` norm of a grid function.
pub fn weighted_norm(weights: &[f64], f: &[f64]) -> f64 {
    weighted_dot(weights, f, f).sqrt()
}
