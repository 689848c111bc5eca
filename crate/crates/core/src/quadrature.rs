//! Gauss–Hermite rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Hermite rule for the weight `e^{-z²}`.
///
/// Newton iteration on the orthonormal Hermite recurrence, with the usual
/// asymptotic starting guesses. Nodes are returned in increasing order and the
/// weights sum to `√π`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss–Hermite rule needs at least one node");
    let pim4 = PI.powf(-0.25);
    let mut z_nodes = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let half = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * z_nodes[0],
            3 => 1.91 * z - 0.91 * z_nodes[1],
            _ => 2.0 * z - z_nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        z_nodes[i] = z;
        z_nodes[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        z_nodes[n / 2] = 0.0;
    }
    // Newton above produces descending order.
    z_nodes.reverse();
    w.reverse();
    (z_nodes, w)
}

/// Gauss–Hermite rule rescaled to a `N(mean, sd²)` law.
///
/// Returns `(nodes, probability weights, log Lebesgue weights)` where the last
/// entry is `ln(wⱼ / q(xⱼ))`, the weight of node `j` for integrals against `dx`.
pub fn normal_rule(n: usize, mean: f64, sd: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (z, w) = gauss_hermite(n);
    let sqrt_pi = PI.sqrt();
    let nodes = z.iter().map(|zi| mean + std::f64::consts::SQRT_2 * sd * zi).collect();
    let probs: Vec<f64> = w.iter().map(|wi| wi / sqrt_pi).collect();
    // wⱼ/q(xⱼ) = (w/√π) · √(2π)·sd·e^{z²} = √2·sd·w·e^{z²}
    let log_measure = z
        .iter()
        .zip(&w)
        .map(|(zi, wi)| wi.ln() + zi * zi + (std::f64::consts::SQRT_2 * sd).ln())
        .collect();
    (nodes, probs, log_measure)
}
