//! Gauss–Legendre and Gauss–Hermite rules, found by Newton iteration on the
//! three-term recurrences.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math::{abs, sqrt};

/// Nodes and weights of a one-dimensional quadrature rule.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine map of a Legendre rule from `[-1, 1]` onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> QuadratureRule {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        QuadratureRule {
            nodes: self.nodes.iter().map(|&x| mid + half * x).collect(),
            weights: self.weights.iter().map(|&w| half * w).collect(),
        }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

const NEWTON_EPS: f64 = 3e-15;
const NEWTON_MAX: usize = 100;

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    assert!(n >= 1, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = libm::cos(PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut pp = 0.0;
        for _ in 0..NEWTON_MAX {
            let (p1, dp) = legendre_with_derivative(n, z);
            pp = dp;
            let z1 = z;
            z = z1 - p1 / pp;
            if abs(z - z1) <= NEWTON_EPS {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, z);
        pp = if dp != 0.0 { dp } else { pp };
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    QuadratureRule { nodes, weights }
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
    }
    let dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
    (p1, dp)
}

/// `n`-point Gauss–Hermite rule for the weight `exp(-x^2)`, nodes ascending.
///
/// For an expectation under `N(mu, 1)` use nodes `mu + sqrt(2) x_i` and
/// weights `w_i / sqrt(pi)`.
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    assert!(n >= 1, "quadrature needs at least one node");
    // pi^(-1/4)
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => sqrt(2.0 * nf + 1.0) - 1.855_75 * libm::pow(2.0 * nf + 1.0, -0.166_67),
            1 => z - 1.14 * libm::pow(nf, 0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..NEWTON_MAX {
            let (p1, dp) = hermite_normalized(n, z, PIM4);
            pp = dp;
            let z1 = z;
            z = z1 - p1 / pp;
            if abs(z - z1) <= NEWTON_EPS {
                break;
            }
        }
        // Temporarily store descending positive roots for the initial guesses.
        nodes[i] = z;
        weights[i] = 2.0 / (pp * pp);
    }
    let positive: Vec<(f64, f64)> = (0..m).map(|i| (nodes[i], weights[i])).collect();
    for (i, &(z, w)) in positive.iter().enumerate() {
        nodes[i] = -z;
        weights[i] = w;
        nodes[n - 1 - i] = z;
        weights[n - 1 - i] = w;
    }
    QuadratureRule { nodes, weights }
}

/// Orthonormal Hermite recurrence: returns `(p_n(z), p_n'(z))`.
fn hermite_normalized(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * sqrt(2.0 / jf) * p2 - sqrt((jf - 1.0) / jf) * p3;
    }
    (p1, sqrt(2.0 * n as f64) * p2)
}

/// Standard normal expectation of `f` with an `n`-point Hermite rule.
#[cfg(test)]
fn normal_expectation(rule: &QuadratureRule, mu: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let scale = core::f64::consts::SQRT_2;
    let norm = 1.0 / sqrt(PI);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| norm * w * f(mu + scale * x))
        .sum()
}
