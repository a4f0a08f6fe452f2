//! Dominant-order coefficients `c` of the error functions `D(n) ≈ c / n`.
//!
//! Every coefficient is computed twice — once from determinants or traces of
//! the information matrices, once from the eigenvalues `λ_i` of
//! `I_XY I_X^-1` — and the two must agree to `1e-10` relative. The gap
//! functions use the eigenvalue form, which stays accurate when `λ_i ≈ 1`.

use alloc::vec::Vec;

use crate::fisher::{build_fisher_set, FisherSet};
use crate::math::{abs, excess_over_log, ln, ln_1p};
use crate::model::{ModelSpec, ParamVec};
use crate::numerics::{generalized_eigenvalues, log_det_spd, solve_spd, EigenList, SymMatrix};
use crate::{Error, Result};

/// Relative agreement required between the two computation paths.
pub const PATH_TOLERANCE: f64 = 1e-10;

/// Slack on the `λ_d ≥ 1` assumption.
pub const EIGEN_FLOOR_SLACK: f64 = 1e-8;

fn agree(identity: &'static str, a: f64, b: f64) -> Result<f64> {
    let tolerance = PATH_TOLERANCE * a.abs().max(b.abs()).max(1.0);
    let deviation = abs(a - b);
    if deviation <= tolerance {
        Ok(a)
    } else {
        Err(Error::IdentityViolation {
            identity,
            deviation,
            tolerance,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

/// Eigenvalues of `I_XY I_X^-1`, descending.
pub fn eigenvalues(f: &FisherSet) -> Result<EigenList> {
    generalized_eigenvalues(&f.i_xy, &f.i_x)
}

/// `ln(α λ + 1 − α)`, accurate when the argument is near one.
fn ln_mu(alpha: f64, lambda: f64) -> f64 {
    ln_1p(alpha * (lambda - 1.0))
}

/// Maximum likelihood, Type I: `Tr[(I_XY − I_X) I_X^-1] / 2`.
pub fn coeff_ml_type1(f: &FisherSet) -> Result<f64> {
    let diff = f.i_xy.sub(&f.i_x)?;
    let trace = solve_spd(&f.i_x, &diff.to_matrix())?.trace() / 2.0;
    let lam = eigenvalues(f)?;
    let eig = lam.values().iter().map(|l| l - 1.0).sum::<f64>() / 2.0;
    agree("trace form = eigenvalue form (ML Type I)", trace, eig)
}

/// Bayes, Type I: `ln det[I_XY I_X^-1] / 2`.
pub fn coeff_bayes_type1(f: &FisherSet) -> Result<f64> {
    let det = (log_det_spd(&f.i_xy)? - log_det_spd(&f.i_x)?) / 2.0;
    let lam = eigenvalues(f)?;
    let eig = lam.values().iter().map(|&l| ln(l)).sum::<f64>() / 2.0;
    agree("determinant form = eigenvalue form (Bayes Type I)", det, eig)
}

/// `K_XY = α I_XY + (1 − α) I_X`.
pub fn k_matrix(alpha: f64, f: &FisherSet) -> Result<SymMatrix> {
    check_alpha(alpha)?;
    f.i_xy.combine(alpha, &f.i_x, 1.0 - alpha)
}

/// Bayes, Type II' at fraction `α`: `ln det[K_XY I_X^-1] / (2α)`.
pub fn coeff_bayes_type2p(alpha: f64, f: &FisherSet) -> Result<f64> {
    let k = k_matrix(alpha, f)?;
    let det = (log_det_spd(&k)? - log_det_spd(&f.i_x)?) / (2.0 * alpha);
    let eig = type2p_from_eigenvalues(alpha, &eigenvalues(f)?);
    agree("determinant form = eigenvalue form (Type II')", det, eig)
}

fn type2p_from_eigenvalues(alpha: f64, lam: &EigenList) -> f64 {
    lam.values().iter().map(|&l| ln_mu(alpha, l)).sum::<f64>() / (2.0 * alpha)
}

/// Bayes, Type III' at fraction `α`. The coefficient coincides with Type II';
/// it is computed independently here and the equality is asserted.
pub fn coeff_bayes_type3p(alpha: f64, f: &FisherSet) -> Result<f64> {
    check_alpha(alpha)?;
    let own = type2p_from_eigenvalues(alpha, &eigenvalues(f)?);
    let shared = coeff_bayes_type2p(alpha, f)?;
    agree("Type III' coefficient = Type II' coefficient", shared, own)
}

/// `Σ(λ_i − 1 − ln λ_i) / 2`, the gap between the ML and Bayes Type I coefficients.
pub fn gap_ml_bayes(f: &FisherSet) -> Result<f64> {
    let lam = eigenvalues(f)?;
    let gap = lam.values().iter().map(|&l| excess_over_log(l)).sum::<f64>() / 2.0;
    let diff = coeff_ml_type1(f)? - coeff_bayes_type1(f)?;
    agree("eigenvalue gap = ML − Bayes", gap, diff)
}

/// `Σ(μ_i − 1 − ln μ_i) / (2α)` with `μ_i = α λ_i + 1 − α`: the gap between
/// ML and Bayes Type II' at fraction `α`.
pub fn gap_ml_bayes_alpha(alpha: f64, f: &FisherSet) -> Result<f64> {
    check_alpha(alpha)?;
    let lam = eigenvalues(f)?;
    let gap = lam
        .values()
        .iter()
        .map(|&l| {
            let t = alpha * (l - 1.0);
            t - ln_1p(t)
        })
        .sum::<f64>()
        / (2.0 * alpha);
    let diff = coeff_ml_type1(f)? - coeff_bayes_type2p(alpha, f)?;
    agree("eigenvalue gap = ML − Bayes Type II'", gap, diff)
}

/// `ln det[I_XY K_XY^-1] / (2α)`: how much labelled supplementary data reduce
/// the error, i.e. the limit of `n (D(αn) − D_{Y₁|Xⁿ}(n))`.
///
/// Requires every `λ_i ≥ 1`.
pub fn supplementary_gain(alpha: f64, f: &FisherSet) -> Result<f64> {
    check_alpha(alpha)?;
    let lam = eigenvalues(f)?;
    if lam.min() < 1.0 - EIGEN_FLOOR_SLACK {
        return Err(Error::AssumptionViolated {
            min_eigenvalue: lam.min(),
        });
    }
    let gain = lam
        .values()
        .iter()
        .map(|&l| ln(l) - ln_mu(alpha, l))
        .sum::<f64>()
        / (2.0 * alpha);
    let diff = coeff_bayes_type1(f)? / alpha - coeff_bayes_type2p(alpha, f)?;
    agree("eigenvalue gain = Bayes(αn) − Type II'(n)", gain, diff)
}

/// Generalization error coefficient `d / 2` (either method).
pub fn coeff_prediction(d: usize) -> f64 {
    d as f64 / 2.0
}

/// Every cell of the coefficient tables at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientReport {
    pub ml_type1: f64,
    pub ml_type2: f64,
    pub ml_type3: f64,
    pub bayes_type1: f64,
    pub bayes_type2p: f64,
    pub bayes_type3p: f64,
    pub gap: f64,
    pub gap_alpha: f64,
    /// `None` when some `λ_i < 1`, where the gain formula does not apply.
    pub supplementary_gain: Option<f64>,
    pub prediction: f64,
    pub alpha: f64,
    pub eigenvalues: EigenList,
}

impl CoefficientReport {
    pub fn from_fisher(f: &FisherSet, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let ml = coeff_ml_type1(f)?;
        let supplementary_gain = match supplementary_gain(alpha, f) {
            Ok(g) => Some(g),
            Err(Error::AssumptionViolated { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            ml_type1: ml,
            ml_type2: ml,
            ml_type3: ml,
            bayes_type1: coeff_bayes_type1(f)?,
            bayes_type2p: coeff_bayes_type2p(alpha, f)?,
            bayes_type3p: coeff_bayes_type3p(alpha, f)?,
            gap: gap_ml_bayes(f)?,
            gap_alpha: gap_ml_bayes_alpha(alpha, f)?,
            supplementary_gain,
            prediction: coeff_prediction(f.dim()),
            alpha,
            eigenvalues: eigenvalues(f)?,
        })
    }

    /// Column names matching [`CoefficientReport::values`].
    pub fn columns() -> Vec<&'static str> {
        alloc::vec![
            "alpha",
            "ml_type1",
            "ml_type2",
            "ml_type3",
            "bayes_type1",
            "bayes_type2p",
            "bayes_type3p",
            "gap_ml_bayes",
            "gap_ml_bayes_alpha",
            "supplementary_gain",
            "prediction",
        ]
    }

    pub fn values(&self) -> Vec<f64> {
        alloc::vec![
            self.alpha,
            self.ml_type1,
            self.ml_type2,
            self.ml_type3,
            self.bayes_type1,
            self.bayes_type2p,
            self.bayes_type3p,
            self.gap,
            self.gap_alpha,
            self.supplementary_gain.unwrap_or(f64::NAN),
            self.prediction,
        ]
    }
}

/// Builds the Fisher set at `w` and fills the report.
pub fn coefficient_report(m: &ModelSpec, w: &ParamVec, alpha: f64) -> Result<CoefficientReport> {
    CoefficientReport::from_fisher(&build_fisher_set(m, w)?, alpha)
}
