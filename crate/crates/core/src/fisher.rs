//! Information matrices of the complete-data and marginal models.
//!
//! All four matrices come from one pass over `(x, y)` pairs weighted by
//! `p(x, y | w)`. For the binomial family this pass is the exact finite double
//! sum; for the Gaussian family each component's expectation uses a
//! Gauss–Hermite rule, so `E_{p(x,y)}[g] = sum_y p(y) E_{N(μ_y, 1)}[g(·, y)]`.

use alloc::vec::Vec;

use rand::Rng;

use crate::math::{abs, exp, sqrt};
use crate::model::{
    joint_log_pair, log_conditional_unchecked, sample_joint, score_joint_unchecked, score_marginal_unchecked, Family,
    ModelSpec, ParamVec, D, K,
};
use crate::numerics::{gauss_hermite, sym_eigenvalues, Matrix, QuadratureRule, SymMatrix};
use crate::{log_add_exp, Error, Result};

/// Gauss–Hermite nodes per component.
pub const HERMITE_NODES: usize = 64;

/// Largest tolerated share of the outermost nodes in the Hermite sums.
pub const HERMITE_TAIL_LIMIT: f64 = 1e-8;

pub const EXACT_TOLERANCE: f64 = 1e-12;
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FisherMethod {
    Exact,
    Quadrature,
    MonteCarlo,
    /// Matrices handed in by the caller rather than computed from a model.
    Supplied,
}

/// The four information matrices at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherSet {
    pub i_xy: SymMatrix,
    pub i_x: SymMatrix,
    pub j_xy: Matrix,
    pub i_y_given_x: SymMatrix,
    pub method: FisherMethod,
    pub tolerance: f64,
}

impl FisherSet {
    /// Builds a set from a complete-data / marginal pair, filling `J_XY` and
    /// `I_{Y|X}` from the identities they satisfy.
    pub fn from_pair(i_xy: SymMatrix, i_x: SymMatrix) -> Result<Self> {
        let i_y_given_x = i_xy.sub(&i_x)?;
        Ok(Self {
            j_xy: i_x.to_matrix(),
            i_xy,
            i_x,
            i_y_given_x,
            method: FisherMethod::Supplied,
            tolerance: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.i_xy.dim()
    }

    /// Largest violation of the three set invariants.
    pub fn invariant_deviations(&self) -> Result<[f64; 3]> {
        let diff = self.i_xy.sub(&self.i_x)?;
        let min_eig = sym_eigenvalues(&diff)?.min();
        let cross = self.j_xy.sub(&self.i_x.to_matrix())?.max_abs();
        let cond = self.i_y_given_x.sub(&diff)?.max_abs();
        Ok([(-min_eig).max(0.0), cross, cond])
    }

    fn check(self) -> Result<Self> {
        let dev = self.invariant_deviations()?;
        let names = ["I_XY - I_X is PSD", "J_XY = I_X", "I_Y|X = I_XY - I_X"];
        for (d, name) in dev.into_iter().zip(names) {
            if !(d <= self.tolerance) {
                return Err(Error::IdentityViolation {
                    identity: name,
                    deviation: d,
                    tolerance: self.tolerance,
                });
            }
        }
        Ok(self)
    }
}

/// The conditional information computed both ways.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalFisher {
    /// `E[s_c s_cᵀ]` from conditional scores.
    pub direct: SymMatrix,
    /// `I_XY − I_X`.
    pub difference: SymMatrix,
}

#[derive(Clone, Debug)]
struct Moments {
    xy: [[f64; D]; D],
    x: [[f64; D]; D],
    cross: [[f64; D]; D],
    cond: [[f64; D]; D],
}

impl Moments {
    fn zero() -> Self {
        let z = [[0.0; D]; D];
        Self {
            xy: z,
            x: z,
            cross: z,
            cond: z,
        }
    }

    fn add(&mut self, m: &ModelSpec, w: &ParamVec, x: f64, y: usize, weight: f64) {
        let sj = score_joint_unchecked(m, w, x, y);
        let sm = score_marginal_unchecked(m, w, x);
        let sc: [f64; D] = core::array::from_fn(|i| sj[i] - sm[i]);
        for i in 0..D {
            for j in 0..D {
                self.xy[i][j] += weight * sj[i] * sj[j];
                self.x[i][j] += weight * sm[i] * sm[j];
                self.cross[i][j] += weight * sj[i] * sm[j];
                self.cond[i][j] += weight * sc[i] * sc[j];
            }
        }
    }

    fn sym(a: &[[f64; D]; D]) -> SymMatrix {
        SymMatrix::from_fn(D, |i, j| 0.5 * (a[i][j] + a[j][i]))
    }

    fn max_abs_diff(&self, other: &Moments) -> f64 {
        let mut d: f64 = 0.0;
        for (a, b) in [
            (&self.xy, &other.xy),
            (&self.x, &other.x),
            (&self.cross, &other.cross),
            (&self.cond, &other.cond),
        ] {
            for i in 0..D {
                for j in 0..D {
                    d = d.max(abs(a[i][j] - b[i][j]));
                }
            }
        }
        d
    }

    fn scale(&self) -> f64 {
        let mut s: f64 = 0.0;
        for row in &self.xy {
            for v in row {
                s = s.max(abs(*v));
            }
        }
        s
    }
}

/// Exact finite sum over the binomial support.
fn moments_exact(m: &ModelSpec, w: &ParamVec, trials: u32) -> Moments {
    let mut acc = Moments::zero();
    let lw = w.log_weights();
    for x in 0..=trials {
        let x = x as f64;
        for (y, &lwy) in lw.iter().enumerate() {
            let p = exp(lwy + m.component_log_density(x, w.theta(y)));
            acc.add(m, w, x, y, p);
        }
    }
    acc
}

/// `∫ p(x) Σ_y p(y|x) h(x, y) dx`, with `p(x)` split into its components and
/// each integrated on its own Hermite nodes. Every label is added at every
/// node, as in the finite-support sum, so the score identities hold node by node.
fn moments_hermite(m: &ModelSpec, w: &ParamVec, rule: &QuadratureRule) -> Moments {
    let mut acc = Moments::zero();
    let norm = 1.0 / sqrt(core::f64::consts::PI);
    let a = w.weight();
    let py = [a, 1.0 - a];
    for (y, &p) in py.iter().enumerate() {
        let mu = w.theta(y);
        for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let x = mu + core::f64::consts::SQRT_2 * z;
            let lc = log_conditional_unchecked(m, w, x);
            for (label, &l) in lc.iter().enumerate() {
                acc.add(m, w, x, label, p * norm * wt * exp(l));
            }
        }
    }
    acc
}

/// Contribution of the outermost node pair of each component to `tr I_XY`,
/// relative to the trace: an estimate of the Gaussian mass the rule misses.
fn hermite_tail_estimate(m: &ModelSpec, w: &ParamVec, rule: &QuadratureRule) -> f64 {
    let mut edge = Moments::zero();
    let norm = 1.0 / sqrt(core::f64::consts::PI);
    let a = w.weight();
    let last = rule.len() - 1;
    for (y, p) in [a, 1.0 - a].into_iter().enumerate() {
        for i in [0, last] {
            let x = w.theta(y) + core::f64::consts::SQRT_2 * rule.nodes[i];
            let lc = log_conditional_unchecked(m, w, x);
            for (label, &l) in lc.iter().enumerate() {
                edge.add(m, w, x, label, p * norm * rule.weights[i] * exp(l));
            }
        }
    }
    let full = moments_hermite(m, w, rule);
    let trace = |mo: &Moments| (0..D).map(|i| mo.xy[i][i]).sum::<f64>();
    abs(trace(&edge)) / trace(&full).max(f64::MIN_POSITIVE)
}

/// Moments with the method tag. The Gaussian path checks the tail estimate
/// and the stability of the rule under doubling of the node count.
fn moments(m: &ModelSpec, w: &ParamVec) -> Result<(Moments, FisherMethod)> {
    match m.family() {
        Family::BinomialMixture { trials } => Ok((moments_exact(m, w, trials), FisherMethod::Exact)),
        Family::GaussianMixture1D => {
            let rule = gauss_hermite(HERMITE_NODES);
            let tail = hermite_tail_estimate(m, w, &rule);
            if !(tail <= HERMITE_TAIL_LIMIT) {
                return Err(Error::QuadratureWarning {
                    estimate: tail,
                    limit: HERMITE_TAIL_LIMIT,
                });
            }
            let base = moments_hermite(m, w, &rule);
            let fine = moments_hermite(m, w, &gauss_hermite(2 * HERMITE_NODES));
            let change = base.max_abs_diff(&fine) / base.scale().max(1.0);
            if !(change <= QUADRATURE_TOLERANCE) {
                return Err(Error::QuadratureWarning {
                    estimate: change,
                    limit: QUADRATURE_TOLERANCE,
                });
            }
            Ok((base, FisherMethod::Quadrature))
        }
    }
}

/// Relative change of the Gaussian-family moments when the Hermite node count
/// doubles; zero for the exact path.
pub fn refinement_change(m: &ModelSpec, w: &ParamVec) -> f64 {
    match m.family() {
        Family::BinomialMixture { .. } => 0.0,
        Family::GaussianMixture1D => {
            let base = moments_hermite(m, w, &gauss_hermite(HERMITE_NODES));
            let fine = moments_hermite(m, w, &gauss_hermite(2 * HERMITE_NODES));
            base.max_abs_diff(&fine) / base.scale().max(1.0)
        }
    }
}

/// `I_XY(w) = E[∇ ln p(x,y|w) ∇ ln p(x,y|w)ᵀ]`.
pub fn fisher_joint(m: &ModelSpec, w: &ParamVec) -> Result<SymMatrix> {
    Ok(Moments::sym(&moments(m, w)?.0.xy))
}

/// `I_X(w) = E[∇ ln p(x|w) ∇ ln p(x|w)ᵀ]`.
pub fn fisher_marginal(m: &ModelSpec, w: &ParamVec) -> Result<SymMatrix> {
    Ok(Moments::sym(&moments(m, w)?.0.x))
}

/// `J_XY(w) = E[∇ ln p(x,y|w) ∇ ln p(x|w)ᵀ]`, which equals `I_X(w)`.
pub fn fisher_cross(m: &ModelSpec, w: &ParamVec) -> Result<Matrix> {
    let c = moments(m, w)?.0.cross;
    Ok(Matrix::from_fn(D, D, |i, j| c[i][j]))
}

/// `I_{Y|X}(w)` from conditional scores and as `I_XY − I_X`.
pub fn fisher_conditional(m: &ModelSpec, w: &ParamVec) -> Result<ConditionalFisher> {
    let (mo, _) = moments(m, w)?;
    let difference = Moments::sym(&mo.xy).sub(&Moments::sym(&mo.x))?;
    Ok(ConditionalFisher {
        direct: Moments::sym(&mo.cond),
        difference,
    })
}

/// All four matrices, with the set invariants asserted at the method's tolerance.
pub fn build_fisher_set(m: &ModelSpec, w: &ParamVec) -> Result<FisherSet> {
    let (mo, method) = moments(m, w)?;
    let tolerance = match method {
        FisherMethod::Exact => EXACT_TOLERANCE,
        _ => QUADRATURE_TOLERANCE,
    };
    FisherSet {
        i_xy: Moments::sym(&mo.xy),
        i_x: Moments::sym(&mo.x),
        j_xy: Matrix::from_fn(D, D, |i, j| mo.cross[i][j]),
        i_y_given_x: Moments::sym(&mo.cond),
        method,
        tolerance,
    }
    .check()
}

/// Plain Monte Carlo estimate of `I_XY` and `I_X` with entrywise standard errors.
///
/// Only for cross-checking the deterministic paths.
#[derive(Clone, Debug)]
pub struct MonteCarloFisher {
    pub i_xy: SymMatrix,
    pub i_x: SymMatrix,
    pub se_xy: SymMatrix,
    pub se_x: SymMatrix,
    pub draws: usize,
}

pub fn fisher_monte_carlo<R: Rng + ?Sized>(
    m: &ModelSpec,
    w: &ParamVec,
    draws: usize,
    rng: &mut R,
) -> Result<MonteCarloFisher> {
    if draws < 2 {
        return Err(Error::EmptyData);
    }
    let data = sample_joint(m, w, draws, rng)?;
    let ys = data.labels()?;
    let mut sum = [[[0.0; D]; D]; 2];
    let mut sum2 = [[[0.0; D]; D]; 2];
    for (&x, &y) in data.xs.iter().zip(ys) {
        let sj = score_joint_unchecked(m, w, x, y);
        let sm = score_marginal_unchecked(m, w, x);
        for i in 0..D {
            for j in 0..D {
                for (k, s) in [sj, sm].iter().enumerate() {
                    let v = s[i] * s[j];
                    sum[k][i][j] += v;
                    sum2[k][i][j] += v * v;
                }
            }
        }
    }
    let nf = draws as f64;
    let mean = |k: usize| SymMatrix::from_fn(D, |i, j| sum[k][i][j] / nf);
    let se = |k: usize| {
        SymMatrix::from_fn(D, |i, j| {
            let mu = sum[k][i][j] / nf;
            let var = (sum2[k][i][j] / nf - mu * mu) * nf / (nf - 1.0);
            sqrt(var.max(0.0) / nf)
        })
    };
    Ok(MonteCarloFisher {
        i_xy: mean(0),
        i_x: mean(1),
        se_xy: se(0),
        se_x: se(1),
        draws,
    })
}

/// `E_{q(x)}[f(x)]` using the same exact / Hermite scheme as the information
/// matrices. Used for expectations of per-`x` quantities in the simulations.
pub fn marginal_expectation(m: &ModelSpec, w: &ParamVec, mut f: impl FnMut(f64) -> f64) -> f64 {
    match m.family() {
        Family::BinomialMixture { trials } => (0..=trials)
            .map(|x| {
                let x = x as f64;
                let j = joint_log_pair(m, w, x);
                exp(log_add_exp(j[0], j[1])) * f(x)
            })
            .sum(),
        Family::GaussianMixture1D => {
            let rule = gauss_hermite(HERMITE_NODES);
            let norm = 1.0 / sqrt(core::f64::consts::PI);
            let a = w.weight();
            let mut acc = 0.0;
            for (y, p) in [a, 1.0 - a].into_iter().enumerate() {
                for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    acc += p * norm * wt * f(w.theta(y) + core::f64::consts::SQRT_2 * z);
                }
            }
            acc
        }
    }
}

/// Nodes and weights `(x, q(x))` of the exact marginal sum, for the binomial family.
pub fn support_weights(m: &ModelSpec, w: &ParamVec) -> Option<Vec<(f64, f64)>> {
    let trials = m.trials()?;
    Some(
        (0..=trials)
            .map(|x| {
                let x = x as f64;
                let lw = w.log_weights();
                let p: f64 = (0..K)
                    .map(|y| exp(lw[y] + m.component_log_density(x, w.theta(y))))
                    .sum();
                (x, p)
            })
            .collect(),
    )
}
