//! Dominant eigenpair by power iteration, and a dense brute-force oracle for
//! every spectral claim made about a discretized operator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{adjoint, DiscreteOperator};
use crate::pattern::PATTERN_REL_THRESHOLD;
use crate::{weighted_dot, weighted_norm};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_DENSE_LIMIT: usize = 2000;
/// Relative tolerance for "on the spectral circle" and for eigenvalue coincidence.
pub const CIRCLE_TOL: f64 = 1e-8;
const GAP_MAX_ITER: usize = 2000;

/// `(ρ, φ, φ*)` with `Σ wφ² = 1`, `Σ wφφ* = 1`, plus gap and residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eigenpair {
    pub rho: f64,
    pub phi: Vec<f64>,
    pub phi_star: Vec<f64>,
    /// Estimated `|λ₂|/ρ`.
    pub gap: f64,
    /// `‖Tφ − ρφ‖` in the weighted norm.
    pub residual: f64,
    pub iterations: usize,
}

fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let out = m * DVector::from_column_slice(v);
    out.as_slice().to_vec()
}

/// Power iteration from the constant function. Returns `(ρ, φ, residual, iterations)`.
fn power_iteration(m: &DMatrix<f64>, w: &[f64], tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>, f64, usize)> {
    let n = w.len();
    let mut v = vec![1.0; n];
    let nv = weighted_norm(w, &v);
    v.iter_mut().for_each(|x| *x /= nv);
    for it in 1..=max_iter {
        let u = matvec(m, &v);
        let rho = weighted_dot(w, &v, &u);
        let res: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - rho * b).collect();
        let residual = weighted_norm(w, &res);
        let nu = weighted_norm(w, &u);
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::NoConvergence(it));
        }
        let converged = residual <= tol * rho.abs();
        if converged {
            if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| **x <= 0.0) {
                return Err(Error::NonPositiveIterate { index, value });
            }
            return Ok((rho, v, residual, it));
        }
        v = u.into_iter().map(|x| x / nu).collect();
    }
    Err(Error::NoConvergence(max_iter))
}

/// Dominant eigenpair of a positive operator.
///
/// `tol` bounds the residual relative to `ρ`. `φ*` comes from the same iteration
/// on the weighted adjoint; the gap is the asymptotic growth rate of the
/// deflated iteration `x ↦ Tx − ρφ⟨φ*, x⟩`, divided by `ρ`.
pub fn dominant_eigenpair(op: &DiscreteOperator, tol: f64, max_iter: usize) -> Result<Eigenpair> {
    let w = op.grid().weights();
    let (rho, phi, residual, iterations) = power_iteration(op.matrix(), w, tol, max_iter)?;
    let adj = adjoint(op)?;
    let (_, mut phi_star, _, _) = power_iteration(adj.matrix(), w, tol, max_iter)?;
    let c = weighted_dot(w, &phi, &phi_star);
    phi_star.iter_mut().for_each(|x| *x /= c);
    let gap = deflated_rate(op.matrix(), w, rho, &phi, &phi_star) / rho;
    Ok(Eigenpair { rho, phi, phi_star, gap, residual, iterations })
}

/// Same with default tolerance and iteration cap.
pub fn dominant_eigenpair_default(op: &DiscreteOperator) -> Result<Eigenpair> {
    dominant_eigenpair(op, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

fn deflated_rate(m: &DMatrix<f64>, w: &[f64], rho: f64, phi: &[f64], phi_star: &[f64]) -> f64 {
    let n = phi.len();
    let project = |x: &mut Vec<f64>| {
        let c = weighted_dot(w, phi_star, x);
        x.iter_mut().zip(phi).for_each(|(a, p)| *a -= c * p);
    };
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x: Vec<f64> = (0..n).map(|i| (1.7 * i as f64 + 0.3).sin()).collect();
    project(&mut x);
    let n0 = norm(&x);
    if n0 == 0.0 {
        return 0.0;
    }
    x.iter_mut().for_each(|v| *v /= n0);
    let mut log_norms = vec![0.0];
    let mut prev = f64::NAN;
    for k in 1..=GAP_MAX_ITER {
        let mut y = matvec(m, &x);
        let c = weighted_dot(w, phi_star, &x);
        y.iter_mut().zip(phi).for_each(|(a, p)| *a -= rho * c * p);
        project(&mut y);
        let ny = norm(&y);
        if !(ny > 1e-300 * rho.abs()) {
            return 0.0;
        }
        log_norms.push(log_norms[k - 1] + ny.ln());
        x = y.into_iter().map(|v| v / ny).collect();
        if k >= 50 && k % 25 == 0 {
            let half = k / 2;
            let est = ((log_norms[k] - log_norms[half]) / (k - half) as f64).exp();
            if (est - prev).abs() <= 1e-9 * est {
                return est;
            }
            prev = est;
        }
    }
    let k = GAP_MAX_ITER;
    ((log_norms[k] - log_norms[k / 2]) / (k - k / 2) as f64).exp()
}

/// Options of the dense oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub dense_limit: usize,
    /// Also run the eigenvector census on the weighted adjoint.
    pub adjoint: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { dense_limit: DEFAULT_DENSE_LIMIT, adjoint: true }
    }
}

/// Full spectrum of a dense operator plus a census of its nonnegative eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// `(re, im)` pairs sorted by decreasing modulus.
    pub eigenvalues: Vec<(f64, f64)>,
    pub spectral_radius: f64,
    /// Largest real eigenvalue (the Perron root of a nonnegative matrix).
    pub perron_root: f64,
    /// Eigenvectors (up to scale) without sign change.
    pub positive_eigenvector_count: usize,
    /// Same census on the weighted adjoint, when requested.
    pub adjoint_positive_eigenvector_count: Option<usize>,
    /// Eigenvalues coinciding with the Perron root (algebraic multiplicity).
    pub dominant_multiplicity: usize,
    /// Independent eigenvectors for the Perron root (geometric multiplicity).
    pub dominant_geometric_multiplicity: usize,
    pub is_simple: bool,
    pub is_isolated: bool,
    /// Distance from the Perron root to the rest of the spectrum.
    pub isolation_distance: f64,
    pub on_circle_count: usize,
    /// Second largest modulus over the spectral radius.
    pub gap: f64,
}

/// Dense oracle with the default configuration.
pub fn full_spectrum_oracle(op: &DiscreteOperator) -> Result<SpectrumReport> {
    full_spectrum_oracle_with(op, &OracleConfig::default())
}

pub fn full_spectrum_oracle_with(op: &DiscreteOperator, cfg: &OracleConfig) -> Result<SpectrumReport> {
    let n = op.len();
    if n > cfg.dense_limit {
        return Err(Error::TooLarge { n, limit: cfg.dense_limit });
    }
    let m = op.matrix();
    let mut eig: Vec<(f64, f64)> = m.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    eig.sort_by(|a, b| {
        let (ma, mb) = (a.0.hypot(a.1), b.0.hypot(b.1));
        mb.total_cmp(&ma).then(b.0.total_cmp(&a.0)).then(b.1.total_cmp(&a.1))
    });
    let r = eig.first().map_or(0.0, |e| e.0.hypot(e.1));
    let reals = real_eigenvalues(&eig, r);
    let perron_root = reals.first().copied().unwrap_or(0.0);

    let census = eigenvector_census(m, &reals, r);
    let adjoint_count = if cfg.adjoint && op.grid().weights().iter().all(|w| *w > 0.0) {
        let a = adjoint(op)?;
        Some(eigenvector_census(a.matrix(), &reals, r).count)
    } else {
        None
    };

    let close = |e: &(f64, f64)| (e.0 - perron_root).hypot(e.1) <= CIRCLE_TOL * r.max(f64::MIN_POSITIVE);
    let dominant_multiplicity = eig.iter().filter(|e| close(e)).count();
    let mut skipped = false;
    let isolation_distance = eig
        .iter()
        .filter(|e| {
            if !skipped && close(e) {
                skipped = true;
                false
            } else {
                true
            }
        })
        .map(|e| (e.0 - perron_root).hypot(e.1))
        .fold(f64::INFINITY, f64::min);
    let on_circle_count = eig.iter().filter(|e| e.0.hypot(e.1) >= r * (1.0 - CIRCLE_TOL)).count();
    let gap = if eig.len() > 1 && r > 0.0 { eig[1].0.hypot(eig[1].1) / r } else { 0.0 };
    Ok(SpectrumReport {
        spectral_radius: r,
        perron_root,
        positive_eigenvector_count: census.count,
        adjoint_positive_eigenvector_count: adjoint_count,
        dominant_multiplicity,
        dominant_geometric_multiplicity: census.dominant_geometric,
        is_simple: dominant_multiplicity == 1 && census.dominant_geometric == 1,
        is_isolated: isolation_distance > CIRCLE_TOL * r,
        isolation_distance,
        on_circle_count,
        gap,
        eigenvalues: eig,
    })
}

/// Nonnegative real eigenvalues above the noise floor, descending. Pairs with
/// a negligible imaginary part count as real.
fn real_eigenvalues(eig: &[(f64, f64)], r: f64) -> Vec<f64> {
    let mut out: Vec<f64> = eig
        .iter()
        .filter(|(re, im)| *re > 1e-10 * r && im.abs() <= 1e-8 * re.abs() + 1e-14 * r)
        .map(|(re, _)| *re)
        .collect();
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

struct Census {
    count: usize,
    dominant_geometric: usize,
}

/// Counts eigenvectors without sign change, cluster by cluster of real
/// eigenvalues; a nonnegative eigenvector of a nonnegative matrix can only
/// belong to a real eigenvalue ≥ 0. Null vectors supported on zero columns are
/// counted separately (one per zero column).
fn eigenvector_census(m: &DMatrix<f64>, reals: &[f64], r: f64) -> Census {
    let n = m.nrows();
    let maxe = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let zero_cols = (0..n).filter(|&j| m.column(j).iter().all(|v| v.abs() <= PATTERN_REL_THRESHOLD * maxe)).count();
    let mut count = zero_cols;
    let mut dominant_geometric = 0;
    if reals.is_empty() {
        return Census { count, dominant_geometric };
    }
    let hess = m.clone().hessenberg();
    let (q, h) = hess.unpack();
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &lam in reals {
        match clusters.last_mut() {
            Some(c) if (c[0] - lam).abs() <= 1e-8 * c[0].abs() + 1e-14 * r => c.push(lam),
            _ => clusters.push(vec![lam]),
        }
    }
    for (ci, cluster) in clusters.iter().enumerate() {
        let lam = cluster.iter().sum::<f64>() / cluster.len() as f64;
        let basis = eigenspace(m, &q, &h, lam, cluster.len(), r);
        if ci == 0 {
            dominant_geometric = basis.len();
        }
        count += basis.iter().filter(|v| sign_definite(v)).count();
    }
    Census { count, dominant_geometric }
}

fn sign_definite(v: &[f64]) -> bool {
    let mx = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if mx == 0.0 {
        return false;
    }
    let cut = 1e-9 * mx;
    let pos = v.iter().any(|x| *x > cut);
    let neg = v.iter().any(|x| *x < -cut);
    pos != neg
}

/// LU factors of `H − μI` for upper Hessenberg `H`, with adjacent-row pivoting.
struct HessLu {
    u: DMatrix<f64>,
    swaps: Vec<bool>,
    mult: Vec<f64>,
}

impl HessLu {
    fn new(h: &DMatrix<f64>, mu: f64, floor: f64) -> Self {
        let n = h.nrows();
        let mut u = h.clone();
        for i in 0..n {
            u[(i, i)] -= mu;
        }
        let mut swaps = vec![false; n.saturating_sub(1)];
        let mut mult = vec![0.0; n.saturating_sub(1)];
        for k in 0..n.saturating_sub(1) {
            if u[(k + 1, k)].abs() > u[(k, k)].abs() {
                for j in k..n {
                    let t = u[(k, j)];
                    u[(k, j)] = u[(k + 1, j)];
                    u[(k + 1, j)] = t;
                }
                swaps[k] = true;
            }
            if u[(k, k)].abs() < floor {
                u[(k, k)] = floor;
            }
            let l = u[(k + 1, k)] / u[(k, k)];
            mult[k] = l;
            if l != 0.0 {
                for j in k..n {
                    let t = u[(k, j)];
                    u[(k + 1, j)] -= l * t;
                }
            }
        }
        if n > 0 && u[(n - 1, n - 1)].abs() < floor {
            u[(n - 1, n - 1)] = floor;
        }
        Self { u, swaps, mult }
    }

    fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        for k in 0..n.saturating_sub(1) {
            if self.swaps[k] {
                b.swap(k, k + 1);
            }
            b[k + 1] -= self.mult[k] * b[k];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.u[(i, j)] * b[j];
            }
            b[i] = s / self.u[(i, i)];
        }
    }
}

/// Basis of the eigenspace for the cluster at `lam` of size `k`, by (block)
/// inverse iteration in Hessenberg coordinates. Multi-vector bases are returned
/// in reduced row echelon form so that decoupled eigenvectors stay separated.
fn eigenspace(m: &DMatrix<f64>, q: &DMatrix<f64>, h: &DMatrix<f64>, lam: f64, k: usize, r: f64) -> Vec<Vec<f64>> {
    let n = m.nrows();
    let mu = lam * (1.0 + 1e-10) + 1e-14 * r;
    let lu = HessLu::new(h, mu, 1e-300_f64.max(f64::EPSILON * r * 1e-6));
    let mut rng = ChaCha8Rng::seed_from_u64(0xE16E_u64 ^ k as u64);
    let mut y = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.5..1.5));
    for _ in 0..4 {
        for c in 0..k {
            let mut col: Vec<f64> = y.column(c).iter().copied().collect();
            lu.solve(&mut col);
            y.set_column(c, &DVector::from_vec(col));
        }
        y = y.qr().q();
    }
    let v = q * &y;
    if k == 1 {
        return vec![v.column(0).iter().copied().collect()];
    }
    // Directions c with (M − λI)Vc ≈ 0.
    let resid = m * &v - &v * lam;
    let svd = resid.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let tol = 1e-7 * lam.abs() + 1e-12 * r;
    let mut dirs: Vec<usize> = (0..k).filter(|&i| svd.singular_values[i] <= tol).collect();
    if dirs.is_empty() {
        let imin = (0..k).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
        dirs.push(imin);
    }
    let c = DMatrix::from_fn(k, dirs.len(), |i, j| vt[(dirs[j], i)]);
    let basis = &v * c;
    rref_rows(basis.transpose())
}

fn rref_rows(mut a: DMatrix<f64>) -> Vec<Vec<f64>> {
    let (rows, cols) = a.shape();
    let scale = a.amax();
    let mut lead = 0;
    for r in 0..rows {
        let mut best = None;
        while lead < cols {
            let (imax, vmax) = (r..rows).map(|i| (i, a[(i, lead)].abs())).fold((r, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if vmax > 1e-8 * scale {
                best = Some(imax);
                break;
            }
            lead += 1;
        }
        let Some(p) = best else { break };
        a.swap_rows(r, p);
        let piv = a[(r, lead)];
        for j in 0..cols {
            a[(r, j)] /= piv;
        }
        for i in 0..rows {
            if i != r {
                let f = a[(i, lead)];
                if f != 0.0 {
                    for j in 0..cols {
                        let t = a[(r, j)];
                        a[(i, j)] -= f * t;
                    }
                }
            }
        }
        lead += 1;
    }
    (0..rows).map(|i| a.row(i).iter().copied().collect()).collect()
}

/// Outcome of one theorem assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub id: char,
    pub name: String,
    pub passed: bool,
    pub witness: String,
}

/// Assertions (a)–(e) on a discretized operator and its eigenpair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub assertions: Vec<AssertionResult>,
    pub spectrum: SpectrumReport,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failed(&self) -> Vec<char> {
        self.assertions.iter().filter(|a| !a.passed).map(|a| a.id).collect()
    }
}

/// Checks, against the dense oracle:
/// (a) ρ equals the spectral radius within 1e-8 relative;
/// (b) exactly one nonnegative eigenvector for T and for T*;
/// (c) the Perron root has algebraic and geometric multiplicity one and a rank-one projector;
/// (d) the Perron root is isolated;
/// (e) it is the only eigenvalue on the spectral circle.
///
/// Returns `Error::ConclusionViolated` carrying the full report when any assertion fails.
pub fn verify_theorem_conclusions(op: &DiscreteOperator, pair: &Eigenpair) -> Result<TheoremReport> {
    verify_theorem_conclusions_with(op, pair, &OracleConfig::default())
}

pub fn verify_theorem_conclusions_with(op: &DiscreteOperator, pair: &Eigenpair, cfg: &OracleConfig) -> Result<TheoremReport> {
    let s = full_spectrum_oracle_with(op, cfg)?;
    let r = s.spectral_radius;
    let rel = (pair.rho - r).abs() / r.max(f64::MIN_POSITIVE);
    let w = op.grid().weights();
    let pairing = weighted_dot(w, &pair.phi, &pair.phi_star);
    let mut out = vec![AssertionResult {
        id: 'a',
        name: "rho equals spectral radius".into(),
        passed: rel <= 1e-8,
        witness: format!("rho={:e} r(T)={:e} rel={:e}", pair.rho, r, rel),
    }];
    let adj_ok = s.adjoint_positive_eigenvector_count.is_none_or(|c| c == 1);
    out.push(AssertionResult {
        id: 'b',
        name: "unique nonnegative eigenvector (T and T*)".into(),
        passed: s.positive_eigenvector_count == 1 && adj_ok,
        witness: format!(
            "T: {} T*: {}",
            s.positive_eigenvector_count,
            s.adjoint_positive_eigenvector_count.map_or("not computed".into(), |c| c.to_string())
        ),
    });
    out.push(AssertionResult {
        id: 'c',
        name: "rho simple".into(),
        passed: s.is_simple && pairing.is_finite() && (pairing - 1.0).abs() < 1e-8,
        witness: format!(
            "algebraic={} geometric={} <phi,phi*>={:e}",
            s.dominant_multiplicity, s.dominant_geometric_multiplicity, pairing
        ),
    });
    out.push(AssertionResult {
        id: 'd',
        name: "rho isolated".into(),
        passed: s.is_isolated,
        witness: format!("distance to rest of spectrum {:e}", s.isolation_distance),
    });
    out.push(AssertionResult {
        id: 'e',
        name: "unique eigenvalue on spectral circle".into(),
        passed: s.on_circle_count == 1,
        witness: format!("{} eigenvalues with |z| = r(T)", s.on_circle_count),
    });
    let report = TheoremReport { assertions: out, spectrum: s };
    if report.all_passed() {
        Ok(report)
    } else {
        Err(Error::ConclusionViolated(Box::new(report)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statemodels::Grid;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn positive(n: usize, seed: u64) -> DiscreteOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DiscreteOperator::from_square(DMatrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0)), "rand").unwrap()
    }

    #[test]
    fn symmetric_two_by_two() {
        let op = DiscreteOperator::from_square(DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.5]), "s").unwrap();
        let p = dominant_eigenpair_default(&op).unwrap();
        assert_relative_eq!(p.rho, 0.75, epsilon = 1e-14);
        assert_relative_eq!(p.phi[0], p.phi[1], epsilon = 1e-14);
        assert_relative_eq!(p.gap, 1.0 / 3.0, max_relative = 1e-6);
    }

    #[test]
    fn stochastic_matrix_has_unit_root() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.3, 0.1]);
        let op = DiscreteOperator::from_square(p, "chain").unwrap();
        let e = dominant_eigenpair_default(&op).unwrap();
        assert_relative_eq!(e.rho, 1.0, epsilon = 1e-13);
        assert!(e.phi.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let w = op.grid().weights();
        assert_relative_eq!(weighted_dot(w, &e.phi, &e.phi), 1.0, epsilon = 1e-12);
        assert_relative_eq!(weighted_dot(w, &e.phi, &e.phi_star), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_fails_uniqueness_and_simplicity() {
        let op = DiscreteOperator::from_square(DMatrix::identity(4, 4), "id").unwrap();
        let s = full_spectrum_oracle(&op).unwrap();
        assert_eq!(s.positive_eigenvector_count, 4);
        assert!(!s.is_simple);
        let pair = dominant_eigenpair_default(&op).unwrap();
        match verify_theorem_conclusions(&op, &pair) {
            Err(Error::ConclusionViolated(rep)) => {
                let f = rep.failed();
                assert!(f.contains(&'b') && f.contains(&'c'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn permutation_fails_circle_uniqueness() {
        let op = DiscreteOperator::from_square(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), "perm").unwrap();
        let pair = dominant_eigenpair_default(&op).unwrap();
        match verify_theorem_conclusions(&op, &pair) {
            Err(Error::ConclusionViolated(rep)) => {
                assert_eq!(rep.failed(), vec!['e']);
                assert_eq!(rep.spectrum.on_circle_count, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_diagonal_has_two_positive_eigenvectors() {
        let a = positive(4, 1);
        let b = positive(3, 2);
        let mut m = DMatrix::zeros(7, 7);
        m.view_mut((0, 0), (4, 4)).copy_from(a.matrix());
        m.view_mut((4, 4), (3, 3)).copy_from(b.matrix());
        let op = DiscreteOperator::from_square(m, "blocks").unwrap();
        let s = full_spectrum_oracle(&op).unwrap();
        assert!(s.positive_eigenvector_count >= 2, "{s:?}");
    }

    #[test]
    fn equal_blocks_counted_through_cluster() {
        let a = positive(5, 3);
        let mut m = DMatrix::zeros(10, 10);
        m.view_mut((0, 0), (5, 5)).copy_from(a.matrix());
        m.view_mut((5, 5), (5, 5)).copy_from(a.matrix());
        let s = full_spectrum_oracle(&DiscreteOperator::from_square(m, "twin").unwrap()).unwrap();
        assert_eq!(s.dominant_multiplicity, 2);
        assert_eq!(s.positive_eigenvector_count, 2);
    }

    #[test]
    fn random_positive_matrix_satisfies_conclusions() {
        let op = positive(50, 7);
        let pair = dominant_eigenpair_default(&op).unwrap();
        let rep = verify_theorem_conclusions(&op, &pair).unwrap();
        assert_eq!(rep.spectrum.positive_eigenvector_count, 1);
        assert_eq!(rep.spectrum.adjoint_positive_eigenvector_count, Some(1));
        assert_relative_eq!(pair.rho, rep.spectrum.spectral_radius, max_relative = 1e-8);
    }

    #[test]
    fn too_large_rejected() {
        let op = positive(6, 1);
        let cfg = OracleConfig { dense_limit: 5, adjoint: false };
        assert!(matches!(full_spectrum_oracle_with(&op, &cfg), Err(Error::TooLarge { n: 6, limit: 5 })));
    }

    #[test]
    fn reducible_zero_block_gives_non_positive_iterate() {
        // Column 1 never feeds row 0 and row 1 is zero: the iterate dies on index 1.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let op = DiscreteOperator::from_square(m, "nil").unwrap();
        assert!(matches!(dominant_eigenpair_default(&op), Err(Error::NonPositiveIterate { index: 1, .. })));
    }

    #[test]
    fn weighted_grid_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        let grid = Grid::new((0..8).map(|i| vec![i as f64]).collect(), w.iter().map(|v| v / s).collect()).unwrap();
        let op = DiscreteOperator::from_matrix(grid, positive(8, 9).matrix().clone(), "w").unwrap();
        let p = dominant_eigenpair_default(&op).unwrap();
        let wt = op.grid().weights();
        for _ in 0..20 {
            let f: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tf = crate::operator::apply(&op, &f).unwrap();
            assert!((weighted_dot(wt, &p.phi_star, &tf) - p.rho * weighted_dot(wt, &p.phi_star, &f)).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scale_invariance(seed in any::<u64>(), c in 0.01f64..100.0) {
            let op = positive(12, seed);
            let p1 = dominant_eigenpair_default(&op).unwrap();
            let p2 = dominant_eigenpair_default(&op.scaled(c)).unwrap();
            prop_assert!((p2.rho / (c * p1.rho) - 1.0).abs() < 1e-12);
            for (a, b) in p1.phi.iter().zip(&p2.phi) { prop_assert!((a - b).abs() < 1e-12); }
            for (a, b) in p1.phi_star.iter().zip(&p2.phi_star) { prop_assert!((a - b).abs() < 1e-12); }
        }

        #[test]
        fn oracle_agrees_with_power_iteration(seed in any::<u64>(), n in 2usize..30) {
            let op = positive(n, seed);
            let p = dominant_eigenpair_default(&op).unwrap();
            let s = full_spectrum_oracle(&op).unwrap();
            prop_assert!((p.rho - s.spectral_radius).abs() <= 1e-8 * s.spectral_radius);
            prop_assert!(p.phi.iter().all(|v| *v > 0.0));
            prop_assert!(p.phi_star.iter().all(|v| *v > 0.0));
            prop_assert!(p.gap < 1.0);
            // Conjugate-closed spectrum.
            let im_sum: f64 = s.eigenvalues.iter().map(|e| e.1).sum();
            prop_assert!(im_sum.abs() < 1e-8 * s.spectral_radius);
        }
    }
}
