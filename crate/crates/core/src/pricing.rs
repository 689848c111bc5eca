//! Bond prices, yield curves, the long-horizon pricing limit and the
//! permanent/transitory decomposition of the SDF.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{apply, DiscreteOperator, SdfSpec};
use crate::spectral::Eigenpair;
use crate::statemodels::{Grid, PathSample, StateModel};
use crate::{weighted_dot, weighted_norm};

/// Zero-coupon prices `Tⁿ1(x)` and per-period net yields `yₙ(x) = (Tⁿ1(x))^{−1/n} − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldCurve {
    pub horizons: Vec<usize>,
    /// `prices[n−1][i]` is the price at grid point `i` of the bond maturing in `n` periods.
    pub prices: Vec<Vec<f64>>,
    pub yields: Vec<Vec<f64>>,
}

/// Prices by repeated application of `T` to the unit payoff (equal to `compose_n(op, n)·1`).
pub fn yield_curve(op: &DiscreteOperator, n_max: usize) -> Result<YieldCurve> {
    if n_max == 0 {
        return Err(Error::InvalidModel("yield curve needs n_max ≥ 1".into()));
    }
    let mut price = vec![1.0; op.len()];
    let mut prices = Vec::with_capacity(n_max);
    let mut yields = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        price = apply(op, &price)?;
        if let Some(i) = price.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::ZeroBondPrice { index: i, horizon: n });
        }
        yields.push(price.iter().map(|p| p.powf(-1.0 / n as f64) - 1.0).collect());
        prices.push(price.clone());
    }
    Ok(YieldCurve { horizons: (1..=n_max).collect(), prices, yields })
}

/// `eₙ = ‖ρ^{−n}Tⁿψ − ⟨ψ,φ*⟩φ‖` in the weighted norm, for `n = 1..n_max`.
pub fn long_run_limit_check(op: &DiscreteOperator, pair: &Eigenpair, psi: &[f64], n_max: usize) -> Result<Vec<f64>> {
    let w = op.grid().weights();
    let c = weighted_dot(w, psi, &pair.phi_star);
    let mut v = psi.to_vec();
    let mut out = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        v = apply(op, &v)?.into_iter().map(|x| x / pair.rho).collect();
        let diff: Vec<f64> = v.iter().zip(&pair.phi).map(|(a, p)| a - c * p).collect();
        out.push(weighted_norm(w, &diff));
    }
    Ok(out)
}

/// Least-squares line through `(n, ln eₙ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub from: usize,
    pub to: usize,
}

/// Fits the log-error slope on `[last/2, last]`. `last` is the final horizon
/// before the minimum error whose error still exceeds both `floor` and 100
/// times that minimum. Past the minimum, the error in `ρ` is amplified by
/// `ρ^{-n}` and the sequence creeps upward again.
pub fn fit_log_slope(errors: &[f64], floor: f64) -> Option<RateFit> {
    let (argmin, min) = errors.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1))?;
    let cut = floor.max(100.0 * min);
    let last = errors[..=argmin].iter().rposition(|e| *e > cut)? + 1;
    let from = (last / 2).max(1);
    let pts: Vec<(f64, f64)> = (from..=last).map(|n| (n as f64, errors[n - 1].ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Some(RateFit { slope, intercept: my - slope * mx, from, to: last })
}

/// One payoff of the standard battery and its long-run constant `⟨ψ, φ*⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffConstant {
    pub name: String,
    pub psi: Vec<f64>,
    pub constant: f64,
}

/// Payoffs `1, x, x², 1{x ≤ m}, 1{x > m}` on the first state coordinate, with
/// `m` its weighted median under `Q`.
pub fn payoff_battery(grid: &Grid) -> Vec<(String, Vec<f64>)> {
    let x = grid.coordinate(0);
    let w = grid.weights();
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut acc = 0.0;
    let mut median = x[idx[idx.len() - 1]];
    for &i in &idx {
        acc += w[i];
        if acc >= 0.5 {
            median = x[i];
            break;
        }
    }
    vec![
        ("one".into(), vec![1.0; x.len()]),
        ("x".into(), x.clone()),
        ("x_squared".into(), x.iter().map(|v| v * v).collect()),
        ("below_median".into(), x.iter().map(|v| f64::from(u8::from(*v <= median))).collect()),
        ("above_median".into(), x.iter().map(|v| f64::from(u8::from(*v > median))).collect()),
    ]
}

/// Twisted kernel, its stationary vector and the battery constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub eigenpair: Eigenpair,
    /// `P̃ᵢⱼ = Mᵢⱼ φⱼ / (ρ φᵢ)`.
    pub twisted_kernel: DMatrix<f64>,
    /// Left Perron vector of `P̃`.
    pub pi_tilde: Vec<f64>,
    pub long_run_constants: Vec<PayoffConstant>,
    /// Largest `|Σⱼ P̃ᵢⱼ − 1|`.
    pub max_row_sum_error: f64,
}

pub fn decompose(op: &DiscreteOperator, pair: &Eigenpair) -> Result<Decomposition> {
    let n = op.len();
    let m = op.matrix();
    let (rho, phi) = (pair.rho, &pair.phi);
    let p = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * phi[j] / (rho * phi[i]));
    let mut max_err = 0.0f64;
    for i in 0..n {
        let s: f64 = p.row(i).sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::NonStochasticKernel { row: i, sum: s });
        }
        max_err = max_err.max((s - 1.0).abs());
    }
    let pi_tilde = left_perron_vector(&p)?;
    let w = op.grid().weights();
    let long_run_constants = payoff_battery(op.grid())
        .into_iter()
        .map(|(name, psi)| {
            let constant = weighted_dot(w, &psi, &pair.phi_star);
            PayoffConstant { name, psi, constant }
        })
        .collect();
    Ok(Decomposition { eigenpair: pair.clone(), twisted_kernel: p, pi_tilde, long_run_constants, max_row_sum_error: max_err })
}

/// Stationary row vector of a row-stochastic matrix by a dense LU solve.
pub(crate) fn left_perron_vector(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or_else(|| Error::NonStochasticKernel { row: n, sum: f64::NAN })?;
    Ok(pi.iter().copied().collect())
}

/// Per-step SDF factors along a simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDecomposition {
    pub sdf: Vec<f64>,
    /// `ρ φ(Xₜ)/φ(Xₜ₊₁)`.
    pub transitory: Vec<f64>,
    /// `m φ(Xₜ₊₁)/(ρ φ(Xₜ))`.
    pub permanent: Vec<f64>,
    /// Largest `|transitory·permanent − m| / m`.
    pub max_product_error: f64,
    pub permanent_mean: f64,
    pub permanent_sd: f64,
}

impl PathDecomposition {
    /// Half-width `3·sd/√N` of the Monte Carlo band for the permanent-factor mean.
    pub fn band(&self) -> f64 {
        3.0 * self.permanent_sd / (self.permanent.len() as f64).sqrt()
    }
}

/// Eigenfunction off the grid by the Nyström extension
/// `φ(x) = ρ⁻¹ Σ p(x, x')·E[m | x, x']·φ(x')` over the same quadrature used to build `op`.
pub fn nystrom_extension(model: &StateModel, sdf: &SdfSpec, op: &DiscreteOperator, pair: &Eigenpair, x: &[f64]) -> Result<f64> {
    let draws = op_draws(sdf, op);
    nystrom_with(model, sdf, op.grid(), pair, x, &draws)
}

fn op_draws(sdf: &SdfSpec, op: &DiscreteOperator) -> Vec<f64> {
    match (sdf.shock_law(), op.meta().mc_draws) {
        (crate::operator::ShockLaw::MonteCarlo, Some(n)) => crate::operator::antithetic_draws(n, op.meta().mc_seed),
        _ => Vec::new(),
    }
}

fn nystrom_with(model: &StateModel, sdf: &SdfSpec, grid: &Grid, pair: &Eigenpair, x: &[f64], draws: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    let mut err = None;
    model.visit_transitions(grid, x, |p, xn, stencil| {
        if err.is_some() {
            return;
        }
        match sdf.conditional_mean(model, x, xn, draws) {
            Ok((e, _)) => acc += p * e * stencil.iter().map(|&(j, w)| w * pair.phi[j]).sum::<f64>(),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let v = acc / pair.rho;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::PathOffGrid(x.to_vec()))
    }
}

/// Splits `m(Xₜ, Xₜ₊₁, Yₜ₊₁)` along `path` into transitory and permanent factors.
pub fn decompose_along_path(sdf: &SdfSpec, model: &StateModel, op: &DiscreteOperator, pair: &Eigenpair, path: &PathSample) -> Result<PathDecomposition> {
    let draws = op_draws(sdf, op);
    let grid = op.grid();
    let phi_path: Vec<f64> = path
        .states
        .par_iter()
        .map(|x| match model {
            StateModel::DiscreteChain { .. } => {
                grid.find_point(x).map(|i| pair.phi[i]).ok_or_else(|| Error::PathOffGrid(x.clone()))
            }
            _ => nystrom_with(model, sdf, grid, pair, x, &draws),
        })
        .collect::<Result<Vec<f64>>>()?;
    let rho = pair.rho;
    let t_len = path.shocks.len();
    let mut out = PathDecomposition {
        sdf: Vec::with_capacity(t_len),
        transitory: Vec::with_capacity(t_len),
        permanent: Vec::with_capacity(t_len),
        max_product_error: 0.0,
        permanent_mean: 0.0,
        permanent_sd: 0.0,
    };
    for t in 0..t_len {
        let m = sdf.eval(&path.states[t], &path.states[t + 1], path.shocks[t]);
        let tr = rho * phi_path[t] / phi_path[t + 1];
        let pm = m * phi_path[t + 1] / (rho * phi_path[t]);
        let err = if m > 0.0 { (tr * pm - m).abs() / m } else { (tr * pm - m).abs() };
        out.max_product_error = out.max_product_error.max(err);
        out.sdf.push(m);
        out.transitory.push(tr);
        out.permanent.push(pm);
    }
    let n = t_len as f64;
    out.permanent_mean = out.permanent.iter().sum::<f64>() / n;
    out.permanent_sd = (out.permanent.iter().map(|v| (v - out.permanent_mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{build_pricing_operator, compose_n, GrowthMap, ShockLaw};
    use crate::spectral::{dominant_eigenpair_default, full_spectrum_oracle};
    use crate::statemodels::{simulate_path, stationary_grid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ccapm() -> (StateModel, SdfSpec, DiscreteOperator) {
        let m = StateModel::gaussian_ar1(0.5, 0.1).unwrap();
        let g = stationary_grid(&m, 64).unwrap();
        let sdf = SdfSpec::ccapm(0.98, 2.0, GrowthMap::NextState);
        let op = build_pricing_operator(&m, &sdf, &g, None).unwrap();
        (m, sdf, op)
    }

    fn smooth_random(n: usize, seed: u64) -> DiscreteOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bw = 0.15 * n as f64;
        let m = DMatrix::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64) / bw;
            (0.5 + rng.random::<f64>()) * (-0.5 * d * d).exp()
        });
        DiscreteOperator::from_square(m, "smooth").unwrap()
    }

    #[test]
    fn constant_sdf_flat_curve() {
        let (m, _, op) = ccapm();
        let op = build_pricing_operator(&m, &SdfSpec::constant(0.98), op.grid(), None).unwrap();
        let yc = yield_curve(&op, 40).unwrap();
        for row in &yc.yields {
            for y in row {
                assert!((y - (1.0 / 0.98 - 1.0)).abs() < 1e-12);
            }
        }
        let unit = build_pricing_operator(&m, &SdfSpec::unit(), op.grid(), None).unwrap();
        assert!(yield_curve(&unit, 10).unwrap().yields.iter().flatten().all(|y| y.abs() < 1e-12));
    }

    #[test]
    fn prices_equal_matrix_powers() {
        let op = smooth_random(10, 3);
        let yc = yield_curve(&op, 7).unwrap();
        let p7 = apply(&compose_n(&op, 7).unwrap(), &vec![1.0; 10]).unwrap();
        for (a, b) in yc.prices[6].iter().zip(&p7) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn ccapm_prices_match_affine_closed_form() {
        // Tⁿ1(x) = exp(Aₙ + Bₙx) by the recursion E[e^{cX'}|x] = e^{cax + c²σ²/2}.
        let (m, _, op) = ccapm();
        let sd = m.stationary_sd().unwrap();
        let (a, s, g, b) = (0.5f64, 0.1f64, 2.0f64, 0.98f64);
        let yc = yield_curve(&op, 30).unwrap();
        let (mut an, mut bn) = (0.0f64, 0.0f64);
        for n in 1..=30 {
            // E[β e^{−γx'} e^{Aₙ₋₁ + Bₙ₋₁x'} | x]: coefficient c = Bₙ₋₁ − γ.
            let c = bn - g;
            an = an + b.ln() + 0.5 * c * c * s * s;
            bn = c * a;
            for (i, x) in op.grid().coordinate(0).iter().enumerate().filter(|(_, x)| x.abs() <= 4.0 * sd) {
                assert_relative_eq!(yc.prices[n - 1][i], (an + bn * x).exp(), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn long_run_with_phi_is_flat() {
        let (_, _, op) = ccapm();
        let pair = dominant_eigenpair_default(&op).unwrap();
        let e = long_run_limit_check(&op, &pair, &pair.phi.clone(), 200).unwrap();
        assert!(e.iter().all(|v| *v < 1e-10));
    }

    #[test]
    fn long_run_rate_matches_gap() {
        let op = smooth_random(30, 11);
        let pair = dominant_eigenpair_default(&op).unwrap();
        let oracle = full_spectrum_oracle(&op).unwrap();
        let e = long_run_limit_check(&op, &pair, &vec![1.0; 30], 200).unwrap();
        let fit = fit_log_slope(&e, 1e-11).unwrap();
        assert!((fit.slope - oracle.gap.ln()).abs() < 0.05, "{fit:?} vs {}", oracle.gap.ln());
    }

    #[test]
    fn orthogonal_payoff_decays_to_zero() {
        let op = smooth_random(20, 4);
        let pair = dominant_eigenpair_default(&op).unwrap();
        let w = op.grid().weights();
        // ψ = e₀ − (⟨e₀,φ*⟩/⟨1,φ*⟩)·1 has ⟨ψ,φ*⟩ = 0.
        let mut psi = vec![0.0; 20];
        psi[0] = 1.0;
        let c = weighted_dot(w, &psi, &pair.phi_star) / weighted_dot(w, &vec![1.0; 20], &pair.phi_star);
        psi.iter_mut().for_each(|v| *v -= c);
        assert!(weighted_dot(w, &psi, &pair.phi_star).abs() < 1e-14);
        let e = long_run_limit_check(&op, &pair, &psi, 300).unwrap();
        assert!(e[299] < 1e-10 * e[0].max(1.0));
    }

    #[test]
    fn decomposition_invariants() {
        let (_, _, op) = ccapm();
        let pair = dominant_eigenpair_default(&op).unwrap();
        let d = decompose(&op, &pair).unwrap();
        assert!(d.max_row_sum_error < 1e-10);
        let w = op.grid().weights();
        for i in 0..op.len() {
            assert!((d.pi_tilde[i] - pair.phi[i] * pair.phi_star[i] * w[i]).abs() < 1e-8 * d.pi_tilde.iter().cloned().fold(0.0, f64::max));
        }
        // Ẽ-consistency: Σ π̃ ψ/φ = ⟨ψ, φ*⟩.
        for pc in &d.long_run_constants {
            let e: f64 = (0..op.len()).map(|i| d.pi_tilde[i] * pc.psi[i] / pair.phi[i]).sum();
            assert!((e - pc.constant).abs() < 1e-6 * pc.constant.abs().max(1.0), "{}", pc.name);
        }
    }

    #[test]
    fn iid_twisted_kernel() {
        // Identical rows: φ = 1, ρ = βE[g], P̃ rows ∝ g(x')w(x').
        let pi = vec![0.2, 0.5, 0.3];
        let model = StateModel::discrete_chain(vec![pi.clone(); 3]).unwrap();
        let grid = stationary_grid(&model, 3).unwrap();
        let g = |x: f64| 1.0 + 0.5 * x;
        let sdf = SdfSpec::custom("iid", move |_, xn, _| 0.95 * g(xn[0]), ShockLaw::None);
        let op = build_pricing_operator(&model, &sdf, &grid, None).unwrap();
        let pair = dominant_eigenpair_default(&op).unwrap();
        let eg: f64 = (0..3).map(|j| pi[j] * g(j as f64)).sum();
        assert_relative_eq!(pair.rho, 0.95 * eg, max_relative = 1e-12);
        let d = decompose(&op, &pair).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(d.twisted_kernel[(i, j)], g(j as f64) * pi[j] / eg, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn constant_sdf_factors() {
        let model = StateModel::discrete_chain(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let grid = stationary_grid(&model, 2).unwrap();
        let sdf = SdfSpec::constant(0.97);
        let op = build_pricing_operator(&model, &sdf, &grid, None).unwrap();
        let pair = dominant_eigenpair_default(&op).unwrap();
        let path = simulate_path(&model, 8, 1000).unwrap();
        let d = decompose_along_path(&sdf, &model, &op, &pair, &path).unwrap();
        assert!(d.transitory.iter().all(|t| (t - 0.97).abs() < 1e-12));
        assert!(d.permanent.iter().all(|p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn path_factors_multiply_to_sdf() {
        let (m, sdf, op) = ccapm();
        let pair = dominant_eigenpair_default(&op).unwrap();
        let path = simulate_path(&m, 21, 100_000).unwrap();
        let d = decompose_along_path(&sdf, &m, &op, &pair, &path).unwrap();
        assert!(d.max_product_error < 1e-12);
        assert!((d.permanent_mean - 1.0).abs() < d.band(), "{} ± {}", d.permanent_mean, d.band());
        // Nyström extension reproduces φ at grid points.
        for i in (0..op.len()).step_by(7) {
            let v = nystrom_extension(&m, &sdf, &op, &pair, op.grid().point(i)).unwrap();
            assert_relative_eq!(v, pair.phi[i], max_relative = 1e-9);
        }
    }

    #[test]
    fn slope_fit_on_exact_geometric_sequence() {
        let e: Vec<f64> = (1..=100).map(|n| 3.0 * 0.7f64.powi(n)).collect();
        let f = fit_log_slope(&e, 1e-11).unwrap();
        assert_relative_eq!(f.slope, 0.7f64.ln(), max_relative = 1e-10);
        assert!(fit_log_slope(&[1e-12, 1e-13], 1e-11).is_none());
    }

    #[test]
    fn slope_fit_ignores_rising_rounding_tail() {
        let e: Vec<f64> = (1..=200).map(|n| 0.5f64.powi(n) + 1e-13 * n as f64).collect();
        let f = fit_log_slope(&e, 1e-11).unwrap();
        assert!((f.slope - 0.5f64.ln()).abs() < 0.01, "{f:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn yields_scale_covariant(seed in any::<u64>(), c in 0.2f64..5.0) {
            let op = smooth_random(6, seed);
            let a = yield_curve(&op, 12).unwrap();
            let b = yield_curve(&op.scaled(c), 12).unwrap();
            for (ra, rb) in a.yields.iter().zip(&b.yields) {
                for (ya, yb) in ra.iter().zip(rb) {
                    prop_assert!(((1.0 + yb) - (1.0 + ya) / c).abs() < 1e-10 * (1.0 + ya));
                }
            }
        }

        #[test]
        fn long_run_error_eventually_decreasing(seed in any::<u64>()) {
            let op = smooth_random(15, seed);
            let pair = dominant_eigenpair_default(&op).unwrap();
            let e = long_run_limit_check(&op, &pair, &vec![1.0; 15], 150).unwrap();
            // Complex subdominant pairs make eₙ oscillate, so compare windows.
            let early = e[20..70].iter().cloned().fold(0.0, f64::max);
            let late = e[100..150].iter().cloned().fold(0.0, f64::max);
            prop_assert!(late <= early.max(1e-11), "{late} > {early}");
        }
    }
}
