//! Acceptance criteria. Each test prints one PASS/FAIL line with the measured
//! value next to its tolerance, then asserts.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use eigenprice::conditions::{check_eventual_strong_positivity, check_irreducibility_markov};
use eigenprice::habit::{build_habit_operator, normalized, recover_habit, synthesize_consistent_returns};
use eigenprice::operator::{build_pricing_operator, hs_integral, GrowthMap, HsValue};
use eigenprice::pricing::{decompose, decompose_along_path, fit_log_slope, long_run_limit_check, yield_curve};
use eigenprice::spectral::{dominant_eigenpair_default, verify_theorem_conclusions, Eigenpair};
use eigenprice::statemodels::{simulate_path, Innovation, MeanFunction};
use eigenprice::{full_spectrum_oracle, DiscreteOperator, Error, Grid, SdfSpec, StateModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `β·exp(γ²σ²/(2(1−a)²))` for β=0.98, γ=2, a=0.5, σ=0.1, from the bundled
/// `scripts/affine_oracle.py`.
const AFFINE_RHO: f64 = 1.0616213263214593;
/// Slope of `ln φ`: `−γa/(1−a)`.
const AFFINE_PHI_SLOPE: f64 = -2.0;

fn verdict(id: &str, name: &str, ok: bool, detail: String) -> bool {
    println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn affine_setup() -> (StateModel, SdfSpec, DiscreteOperator) {
    let model = StateModel::gaussian_ar1(0.5, 0.1).unwrap();
    let grid = eigenprice::stationary_grid(&model, 64).unwrap();
    let sdf = SdfSpec::ccapm(0.98, 2.0, GrowthMap::NextState);
    let op = build_pricing_operator(&model, &sdf, &grid, None).unwrap();
    (model, sdf, op)
}

/// Indices of grid points whose cumulative weight (sorted by the first
/// coordinate) lies in the central 90%.
fn central_mass(grid: &Grid) -> Vec<usize> {
    let x = grid.coordinate(0);
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut acc = 0.0;
    let mut out = Vec::new();
    for i in idx {
        let before = acc;
        acc += grid.weights()[i];
        if before >= 0.05 && acc <= 0.95 {
            out.push(i);
        }
    }
    out
}

/// Max relative error of `a` against `b` after the least-squares scale on `idx`.
fn max_rel_up_to_scale(a: &[f64], b: &[f64], idx: &[usize]) -> f64 {
    let c = idx.iter().map(|&i| a[i] * b[i]).sum::<f64>() / idx.iter().map(|&i| b[i] * b[i]).sum::<f64>();
    idx.iter().map(|&i| ((a[i] - c * b[i]) / (c * b[i])).abs()).fold(0.0, f64::max)
}

fn positive_matrix(n: usize, rng: &mut ChaCha8Rng) -> DiscreteOperator {
    DiscreteOperator::from_square(DMatrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0)), "positive").unwrap()
}

fn smooth_kernel(n: usize, rng: &mut ChaCha8Rng) -> DiscreteOperator {
    let bw = rng.random_range(0.1..0.2) * n as f64;
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64) / bw;
        (0.5 + rng.random::<f64>()) * (-0.5 * d * d).exp()
    });
    DiscreteOperator::from_square(m, "smooth").unwrap()
}

#[test]
fn criterion_01_affine_oracle() {
    let t = Instant::now();
    let (_, _, op) = affine_setup();
    let pair = dominant_eigenpair_default(&op).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let rho_err = (pair.rho - AFFINE_RHO).abs() / AFFINE_RHO;
    let x = op.grid().coordinate(0);
    let oracle: Vec<f64> = x.iter().map(|v| (AFFINE_PHI_SLOPE * v).exp()).collect();
    let phi_err = max_rel_up_to_scale(&pair.phi, &oracle, &central_mass(op.grid()));
    let ok = rho_err <= 1e-3 && phi_err <= 1e-2 && elapsed < 5.0;
    assert!(verdict(
        "1",
        "affine oracle",
        ok,
        format!("rho rel err {rho_err:.2e} (tol 1e-3); phi max rel err {phi_err:.2e} (tol 1e-2); {elapsed:.2} s (limit 5 s)")
    ));
}

#[test]
fn criterion_02_perron_frobenius_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_rho = 0.0f64;
    let mut positive_fail = 0;
    for k in 0..100 {
        let n = [5, 20, 50][k % 3];
        let op = positive_matrix(n, &mut rng);
        let pair = dominant_eigenpair_default(&op).unwrap();
        let oracle = full_spectrum_oracle(&op).unwrap();
        worst_rho = worst_rho.max((pair.rho - oracle.spectral_radius).abs() / oracle.spectral_radius);
        if !verify_theorem_conclusions(&op, &pair).is_ok_and(|r| r.all_passed()) {
            positive_fail += 1;
        }
    }
    let mut reducible_ok = 0;
    for k in 0..50 {
        let (n1, n2) = (2 + k % 7, 3 + (k * 5) % 11);
        let n = n1 + n2;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if (i < n1) == (j < n1) {
                    m[(i, j)] = rng.random_range(0.01..1.0);
                }
            }
        }
        let op = DiscreteOperator::from_square(m, "blocks").unwrap();
        let count = full_spectrum_oracle(&op).unwrap().positive_eigenvector_count;
        let violated = match dominant_eigenpair_default(&op) {
            Ok(pair) => matches!(verify_theorem_conclusions(&op, &pair), Err(Error::ConclusionViolated(_))),
            Err(_) => false,
        };
        if count >= 2 && violated {
            reducible_ok += 1;
        }
    }
    let ok = worst_rho <= 1e-8 && positive_fail == 0 && reducible_ok == 50;
    assert!(verdict(
        "2",
        "finite Perron-Frobenius suite",
        ok,
        format!(
            "worst rho rel err {worst_rho:.2e} (tol 1e-8); positive matrices failing (a)-(e): {positive_fail}/100; reducible correctly flagged: {reducible_ok}/50"
        )
    ));
}

#[test]
fn criterion_03_stacked_chain_identification() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = Vec::new();
    let (mut worst_ns, mut worst_esp) = (0, 0);
    for k in 0..20 {
        let c1 = rng.random_range(-0.5..0.6);
        let c2 = rng.random_range(-0.3..0.3);
        let innovation = if k % 2 == 0 {
            Innovation::Laplace { scale: rng.random_range(0.01..0.05) }
        } else {
            Innovation::StudentT { df: rng.random_range(3.0..8.0), scale: rng.random_range(0.01..0.05) }
        };
        let model = StateModel::stacked_nar(2, MeanFunction::affine(rng.random_range(0.0..0.03), vec![c1, c2]), innovation).unwrap();
        let grid = eigenprice::stationary_grid(&model, 16).unwrap();
        let sdf = SdfSpec::ccapm(rng.random_range(0.9..0.99), rng.random_range(0.5..5.0), GrowthMap::NextState);
        let op = build_pricing_operator(&model, &sdf, &grid, None).unwrap();
        let irr = check_irreducibility_markov(&model, &grid, 8).unwrap();
        let esp = check_eventual_strong_positivity(&op, 8);
        let ns = irr.certificate["max_n"].as_u64().unwrap_or(u64::MAX) as usize;
        let en = esp.certificate["n"].as_u64().unwrap_or(u64::MAX) as usize;
        worst_ns = worst_ns.max(ns);
        worst_esp = worst_esp.max(en);
        let theorem = dominant_eigenpair_default(&op).and_then(|p| verify_theorem_conclusions(&op, &p));
        if !(irr.passed() && ns <= 2 && esp.passed() && en == 2 && theorem.is_ok_and(|r| r.all_passed())) {
            failures.push(k);
        }
    }
    assert!(verdict(
        "3",
        "stacked chain to identification",
        failures.is_empty(),
        format!("20 operators; max n(S) {worst_ns} (need <= 2); max ESP n {worst_esp} (need 2); failing seeds {failures:?}")
    ));
}

#[test]
fn criterion_04_degeneracy_diagnostics() {
    let model = StateModel::stacked_nar(2, MeanFunction::affine(0.0, vec![0.3, 0.2]), Innovation::Gaussian { sd: 1.0 }).unwrap();
    let sdf = SdfSpec::ccapm(0.98, 0.1, GrowthMap::NextState);
    let coarse = eigenprice::stationary_grid(&model, 32).unwrap();
    let fine = eigenprice::stationary_grid(&model, 64).unwrap();
    let h1 = hs_integral(&model, &sdf, &coarse, 1).unwrap();
    let h2c = hs_integral(&model, &sdf, &coarse, 2).unwrap();
    let h2f = hs_integral(&model, &sdf, &fine, 2).unwrap();
    let (c, f) = (h2c.value().unwrap_or(f64::NAN), h2f.value().unwrap_or(f64::NAN));
    let drift = (f - c).abs() / c;
    let ok = h1 == HsValue::DegenerateFlag && c.is_finite() && f.is_finite() && drift <= 0.05;
    assert!(verdict(
        "4",
        "degeneracy diagnostics",
        ok,
        format!("horizon 1: {h1:?}; horizon 2: {c:.6} (32/dim) vs {f:.6} (64/dim), drift {drift:.2e} (tol 5e-2)")
    ));
}

fn slope_vs_gap(op: &DiscreteOperator, pair: &Eigenpair) -> (f64, f64) {
    let oracle = full_spectrum_oracle(op).unwrap();
    let e = long_run_limit_check(op, pair, &vec![1.0; op.len()], 200).unwrap();
    let fit = fit_log_slope(&e, 1e-11).map_or(f64::NAN, |f| f.slope);
    (fit, oracle.gap.ln())
}

#[test]
fn criterion_05_long_run_limit() {
    let (_, _, op) = affine_setup();
    let pair = dominant_eigenpair_default(&op).unwrap();
    let (s, g) = slope_vs_gap(&op, &pair);
    let mut worst = (s - g).abs();
    let flat = long_run_limit_check(&op, &pair, &pair.phi.clone(), 200).unwrap().into_iter().fold(0.0, f64::max);
    let mut details = vec![format!("affine slope {s:.4} vs ln gap {g:.4}")];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(20..=50);
        let op = smooth_kernel(n, &mut rng);
        let pair = dominant_eigenpair_default(&op).unwrap();
        let (s, g) = slope_vs_gap(&op, &pair);
        worst = worst.max(if s.is_nan() { f64::INFINITY } else { (s - g).abs() });
    }
    details.push(format!("worst |slope - ln gap| over 11 operators {worst:.4} (tol 0.05)"));
    details.push(format!("max error with psi = phi {flat:.2e} (tol 1e-10)"));
    assert!(verdict("5", "long-run limit", worst <= 0.05 && flat < 1e-10, details.join("; ")));
}

#[test]
fn criterion_06_decomposition_invariants() {
    let (model, sdf, op) = affine_setup();
    let pair = dominant_eigenpair_default(&op).unwrap();
    let d = decompose(&op, &pair).unwrap();
    let w = op.grid().weights();
    let pi_err = (0..op.len()).map(|i| (d.pi_tilde[i] - pair.phi[i] * pair.phi_star[i] * w[i]).abs()).fold(0.0, f64::max);
    let path = simulate_path(&model, 6, 1_000_000).unwrap();
    let pd = decompose_along_path(&sdf, &model, &op, &pair, &path).unwrap();
    let dev = (pd.permanent_mean - 1.0).abs();
    let ok = d.max_row_sum_error <= 1e-10 && pi_err <= 1e-8 && pd.max_product_error <= 1e-12 && dev <= pd.band();
    assert!(verdict(
        "6",
        "decomposition invariants",
        ok,
        format!(
            "row sums {:.2e} (tol 1e-10); pi_tilde vs phi*phi_star*w {pi_err:.2e} (tol 1e-8); product vs m {:.2e} (tol 1e-12); permanent mean {:.6} band ±{:.6}",
            d.max_row_sum_error,
            pd.max_product_error,
            pd.permanent_mean,
            pd.band()
        )
    ));
}

#[test]
fn criterion_07_habit_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_beta, mut worst_h) = (0.0f64, 0.0f64);
    let mut bad_certificates = 0;
    let mut runs = 0;
    for ell in [1usize, 2] {
        let coeffs = if ell == 1 { vec![0.3] } else { vec![0.3, 0.2] };
        let growth = StateModel::stacked_nar(ell, MeanFunction::affine(0.02, coeffs), Innovation::StudentT { df: 5.0, scale: 0.02 }).unwrap();
        let grid = eigenprice::stationary_grid(&growth, if ell == 1 { 64 } else { 32 }).unwrap();
        for _ in 0..10 {
            let b: Vec<f64> = (0..ell).map(|_| rng.random_range(-3.0..3.0)).collect();
            let beta0 = rng.random_range(0.9..0.995);
            let gamma = rng.random_range(0.5..6.0);
            let bb = b.clone();
            let h0 = move |x: &[f64]| bb.iter().zip(x).map(|(c, v)| c * v).sum::<f64>().exp();
            let target = normalized(&grid.points().map(&h0).collect::<Vec<_>>(), &grid);
            let hm = synthesize_consistent_returns(h0, beta0, gamma, growth.clone()).unwrap();
            let op = build_habit_operator(&hm, &grid).unwrap();
            runs += 1;
            match recover_habit(&op) {
                Ok(sol) => {
                    worst_beta = worst_beta.max((sol.beta - beta0).abs() / beta0);
                    let e = sol.h.iter().zip(&target).map(|(a, t)| ((a - t) / t).abs()).fold(0.0, f64::max);
                    worst_h = worst_h.max(e);
                    if sol.uniqueness_certificate.positive_eigenvector_count != 1 {
                        bad_certificates += 1;
                    }
                }
                Err(_) => bad_certificates += 1,
            }
        }
    }
    let ok = worst_beta <= 1e-6 && worst_h <= 1e-4 && bad_certificates == 0;
    assert!(verdict(
        "7",
        "habit round trip",
        ok,
        format!("{runs} runs on l=1 (64 pts) and l=2 (32/dim); beta rel err {worst_beta:.2e} (tol 1e-6); h max rel err {worst_h:.2e} (tol 1e-4); certificates without exactly one nonnegative eigenvector: {bad_certificates}")
    ));
}

#[test]
fn criterion_08_skeleton_consistency() {
    let (kappa, sigma, delta, lambda, tau) = (0.5, 0.2, 0.03, 0.5, 1.0);
    let solve = |t: f64| {
        let model = StateModel::ou_skeleton(kappa, sigma, t).unwrap();
        let grid = eigenprice::stationary_grid(&model, 64).unwrap();
        let op = build_pricing_operator(&model, &SdfSpec::short_rate(delta, lambda, t), &grid, None).unwrap();
        (dominant_eigenpair_default(&op).unwrap(), grid)
    };
    let (p1, grid) = solve(tau);
    let (p2, _) = solve(2.0 * tau);
    let rho_err = (p2.rho - p1.rho * p1.rho).abs() / p2.rho;
    let all: Vec<usize> = (0..grid.len()).collect();
    let phi_err = max_rel_up_to_scale(&p2.phi, &p1.phi, &all);
    let ok = rho_err <= 1e-6 && phi_err <= 1e-4;
    assert!(verdict(
        "8",
        "skeleton consistency",
        ok,
        format!("rho(2t) vs rho(t)^2 rel err {rho_err:.2e} (tol 1e-6); phi max rel err up to scale {phi_err:.2e} (tol 1e-4)")
    ));
}

#[test]
fn criterion_09a_constant_sdf_yields() {
    let (model, _, op) = affine_setup();
    let op = build_pricing_operator(&model, &SdfSpec::constant(0.98), op.grid(), None).unwrap();
    let yc = yield_curve(&op, 200).unwrap();
    let target = 1.0 / 0.98 - 1.0;
    let worst = yc.yields.iter().flatten().map(|y| (y - target).abs()).fold(0.0, f64::max);
    assert!(verdict(
        "9a",
        "constant SDF yields",
        worst <= 1e-12,
        format!("max |y_n - (1/0.98 - 1)| over 200 horizons and all grid points {worst:.2e} (tol 1e-12)")
    ));
}

#[test]
fn criterion_09b_ccapm_yields_flatten() {
    let (_, _, op) = affine_setup();
    let pair = dominant_eigenpair_default(&op).unwrap();
    let yc = yield_curve(&op, 200).unwrap();
    let target = 1.0 / pair.rho - 1.0;
    let y200 = &yc.yields[199];
    let worst = y200.iter().map(|y| (y - target).abs()).fold(0.0, f64::max);
    let central = central_mass(op.grid()).iter().map(|&i| (y200[i] - target).abs()).fold(0.0, f64::max);
    assert!(verdict(
        "9b",
        "CCAPM yields flatten",
        worst <= 1e-4,
        format!("max |y_200 - (1/rho - 1)| {worst:.2e} over the grid, {central:.2e} on the central 90% (tol 1e-4)")
    ));
}

fn numeric_artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/ccapm_ar1.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_eigenprice"))
            .args(["decompose", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d.path())
            .output()
            .unwrap()
            .status;
        assert_eq!(status.code(), Some(0));
    }
    let (a, b) = (numeric_artifacts(dirs[0].path()), numeric_artifacts(dirs[1].path()));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let ok = a.len() == b.len() && a.len() > 5 && differing.is_empty();
    assert!(verdict(
        "10",
        "determinism",
        ok,
        format!("{} artifacts per run; differing: {differing:?}", a.len())
    ));
}
