//! Two-component hierarchical models `p(x, y | w) = p(y | w) p(x | y, w)`.
//!
//! Both families have `K = 2` labels and a three-dimensional parameter
//! `w = (a, θ₁, θ₂)` with `p(y = 0) = a`:
//!
//! - [`Family::BinomialMixture`]: `x | y ~ Binomial(N_t, θ_y)`, so `x` has the
//!   finite support `0..=N_t` and every expectation is an exact finite sum.
//! - [`Family::GaussianMixture1D`]: `x | y ~ N(μ_y, 1)`.
//!
//! Labels are 0-based throughout the crate: label `0` is the component whose
//! weight is `a`.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::math::{abs, erf, exp, ln, ln_1p, ln_gamma, LN_2PI};
use crate::numerics::sym_eigenvalues;
use crate::{fisher, log_add_exp, Error, Result};

/// Number of latent labels.
pub const K: usize = 2;

/// Parameter dimension.
pub const D: usize = 3;

/// Reference binomial mixture: `N_t = 3` trials.
pub const REF_B_TRIALS: u32 = 3;

/// True parameter of the reference binomial mixture.
pub const REF_B_TRUE: [f64; D] = [0.5, 0.8, 0.25];

/// True parameter of the reference Gaussian mixture.
pub const REF_C_TRUE: [f64; D] = [0.4, -1.0, 1.5];

/// Default prior box for the component means of the Gaussian family.
pub const GAUSSIAN_PRIOR_BOX: (f64, f64) = (-6.0, 6.0);

/// Threshold on every diagnostic of [`IdentifiabilityReport`].
pub const MIN_MIXING: f64 = 1e-6;
pub const MIN_COMPONENT_DISTANCE: f64 = 1e-6;
pub const MIN_EIG_IX: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    BinomialMixture { trials: u32 },
    GaussianMixture1D,
}

/// Domain of one parameter coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// The open interval `(0, 1)`.
    UnitInterval,
    RealLine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    family: Family,
    ln_choose: [f64; 64],
}

impl ModelSpec {
    /// Binomial mixture with `trials` trials per observation.
    ///
    /// A two-component binomial mixture is identifiable only for `trials >= 3`.
    pub fn binomial(trials: u32) -> Result<Self> {
        if trials < (2 * K - 1) as u32 {
            return Err(Error::Domain(format!(
                "binomial mixture needs at least {} trials, got {trials}",
                2 * K - 1
            )));
        }
        if trials as usize >= 64 {
            return Err(Error::Domain(format!("at most 63 trials supported, got {trials}")));
        }
        let mut ln_choose = [0.0; 64];
        let nf = trials as f64;
        for (x, slot) in ln_choose.iter_mut().enumerate().take(trials as usize + 1) {
            let xf = x as f64;
            *slot = ln_gamma(nf + 1.0) - ln_gamma(xf + 1.0) - ln_gamma(nf - xf + 1.0);
        }
        Ok(Self {
            family: Family::BinomialMixture { trials },
            ln_choose,
        })
    }

    pub fn gaussian() -> Self {
        Self {
            family: Family::GaussianMixture1D,
            ln_choose: [0.0; 64],
        }
    }

    /// The reference binomial mixture (three trials).
    pub fn ref_b() -> Self {
        Self::binomial(REF_B_TRIALS).expect("reference trial count is valid")
    }

    /// The reference unit-variance Gaussian mixture.
    pub fn ref_c() -> Self {
        Self::gaussian()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn components(&self) -> usize {
        K
    }

    pub fn dim(&self) -> usize {
        D
    }

    pub fn trials(&self) -> Option<u32> {
        match self.family {
            Family::BinomialMixture { trials } => Some(trials),
            Family::GaussianMixture1D => None,
        }
    }

    pub fn domain(&self, coordinate: usize) -> Domain {
        match (self.family, coordinate) {
            (_, 0) | (Family::BinomialMixture { .. }, _) => Domain::UnitInterval,
            (Family::GaussianMixture1D, _) => Domain::RealLine,
        }
    }

    /// Whether `x` ranges over a finite set.
    pub fn has_finite_support(&self) -> bool {
        self.trials().is_some()
    }

    /// The support `0..=N_t` for the binomial family, `None` otherwise.
    pub fn support(&self) -> Option<Vec<f64>> {
        self.trials().map(|t| (0..=t).map(|x| x as f64).collect())
    }

    pub fn check_observation(&self, x: f64) -> Result<()> {
        let ok = match self.family {
            Family::BinomialMixture { trials } => {
                x >= 0.0 && x <= trials as f64 && x == libm::floor(x)
            }
            Family::GaussianMixture1D => x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("observation {x} outside the support")))
        }
    }

    /// `ln p(x | y, w)` for a component parameter `theta` (success probability
    /// or mean), without validation. `x` must lie in the support.
    #[inline]
    pub fn component_log_density(&self, x: f64, theta: f64) -> f64 {
        match self.family {
            Family::BinomialMixture { trials } => {
                let n = trials as f64;
                self.ln_choose[x as usize] + x * ln(theta) + (n - x) * ln_1p(-theta)
            }
            Family::GaussianMixture1D => {
                let r = x - theta;
                -0.5 * LN_2PI - 0.5 * r * r
            }
        }
    }

    /// `d/dθ ln p(x | y, w)` for the component parameter.
    #[inline]
    pub fn component_score(&self, x: f64, theta: f64) -> f64 {
        match self.family {
            Family::BinomialMixture { trials } => x / theta - (trials as f64 - x) / (1.0 - theta),
            Family::GaussianMixture1D => x - theta,
        }
    }

    /// Log binomial coefficient `ln C(N_t, x)`; zero for the Gaussian family.
    #[inline]
    pub fn ln_choose(&self, x: f64) -> f64 {
        match self.family {
            Family::BinomialMixture { .. } => self.ln_choose[x as usize],
            Family::GaussianMixture1D => 0.0,
        }
    }
}

/// A validated parameter point `(a, θ₁, θ₂)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamVec([f64; D]);

impl ParamVec {
    pub fn new(m: &ModelSpec, values: [f64; D]) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            let ok = match m.domain(i) {
                Domain::UnitInterval => v > 0.0 && v < 1.0,
                Domain::RealLine => v.is_finite(),
            };
            if !ok {
                return Err(Error::Domain(format!(
                    "coordinate {i} = {v} outside its open domain"
                )));
            }
        }
        Ok(Self(values))
    }

    pub fn from_slice(m: &ModelSpec, values: &[f64]) -> Result<Self> {
        let arr: [f64; D] = values.try_into().map_err(|_| Error::DimensionMismatch {
            expected: D,
            found: values.len(),
        })?;
        Self::new(m, arr)
    }

    /// Skips validation; callers guarantee the point lies in the open domain.
    pub(crate) fn new_unchecked(values: [f64; D]) -> Self {
        Self(values)
    }

    pub fn values(&self) -> [f64; D] {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mixing weight of label `0`.
    pub fn weight(&self) -> f64 {
        self.0[0]
    }

    /// Component parameter of label `y`.
    pub fn theta(&self, y: usize) -> f64 {
        self.0[1 + y]
    }

    /// `ln p(y | w)` for both labels.
    pub fn log_weights(&self) -> [f64; K] {
        [ln(self.0[0]), ln_1p(-self.0[0])]
    }

    pub fn distance(&self, other: &ParamVec) -> f64 {
        libm::sqrt(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }
}

/// Observations with optional labels (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub xs: Vec<f64>,
    pub ys: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Option<Vec<usize>>) -> Result<Self> {
        if let Some(ys) = &ys {
            if ys.len() != xs.len() {
                return Err(Error::DimensionMismatch {
                    expected: xs.len(),
                    found: ys.len(),
                });
            }
            if let Some(&bad) = ys.iter().find(|&&y| y >= K) {
                return Err(Error::Domain(format!("label {bad} outside 0..{K}")));
            }
        }
        Ok(Self { xs, ys })
    }

    pub fn unlabelled(xs: Vec<f64>) -> Self {
        Self { xs, ys: None }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.ys.as_deref().ok_or(Error::MissingLabels)
    }

    /// Sub-dataset over a contiguous index range.
    pub fn slice(&self, range: Range<usize>) -> Dataset {
        Dataset {
            xs: self.xs[range.clone()].to_vec(),
            ys: self.ys.as_ref().map(|ys| ys[range].to_vec()),
        }
    }

    pub fn validate(&self, m: &ModelSpec) -> Result<()> {
        self.xs.iter().try_for_each(|&x| m.check_observation(x))
    }
}

/// Diagnostics of the regularity conditions at a parameter point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentifiabilityReport {
    pub min_mixing: f64,
    /// Total-variation distance between the two component distributions.
    pub component_distance: f64,
    pub min_eig_ix: f64,
    pub ok: bool,
}

fn check_label(y: usize) -> Result<()> {
    if y < K {
        Ok(())
    } else {
        Err(Error::Domain(format!("label {y} outside 0..{K}")))
    }
}

/// `ln p(y | w) + ln p(x | y, w)`.
pub fn joint_log_density(m: &ModelSpec, w: &ParamVec, x: f64, y: usize) -> Result<f64> {
    m.check_observation(x)?;
    check_label(y)?;
    Ok(w.log_weights()[y] + m.component_log_density(x, w.theta(y)))
}

/// Both joint log densities at `x`, without validation.
#[inline]
pub(crate) fn joint_log_pair(m: &ModelSpec, w: &ParamVec, x: f64) -> [f64; K] {
    let lw = w.log_weights();
    [
        lw[0] + m.component_log_density(x, w.theta(0)),
        lw[1] + m.component_log_density(x, w.theta(1)),
    ]
}

/// `ln p(x | w) = ln sum_y p(x, y | w)`.
pub fn marginal_log_density(m: &ModelSpec, w: &ParamVec, x: f64) -> Result<f64> {
    m.check_observation(x)?;
    let j = joint_log_pair(m, w, x);
    Ok(log_add_exp(j[0], j[1]))
}

/// `ln p(y | x, w)` for both labels, computed in log space.
pub fn latent_log_conditional(m: &ModelSpec, w: &ParamVec, x: f64) -> Result<[f64; K]> {
    m.check_observation(x)?;
    Ok(log_conditional_unchecked(m, w, x))
}

#[inline]
pub(crate) fn log_conditional_unchecked(m: &ModelSpec, w: &ParamVec, x: f64) -> [f64; K] {
    let j = joint_log_pair(m, w, x);
    let lm = log_add_exp(j[0], j[1]);
    [j[0] - lm, j[1] - lm]
}

/// `p(y | x, w)` for both labels.
pub fn latent_conditional(m: &ModelSpec, w: &ParamVec, x: f64) -> Result<[f64; K]> {
    let l = latent_log_conditional(m, w, x)?;
    Ok([exp(l[0]), exp(l[1])])
}

/// Gradient of `ln p(x, y | w)`.
pub fn score_joint(m: &ModelSpec, w: &ParamVec, x: f64, y: usize) -> Result<[f64; D]> {
    m.check_observation(x)?;
    check_label(y)?;
    Ok(score_joint_unchecked(m, w, x, y))
}

#[inline]
pub(crate) fn score_joint_unchecked(m: &ModelSpec, w: &ParamVec, x: f64, y: usize) -> [f64; D] {
    let a = w.weight();
    let mut s = [0.0; D];
    s[0] = if y == 0 { 1.0 / a } else { -1.0 / (1.0 - a) };
    s[1 + y] = m.component_score(x, w.theta(y));
    s
}

/// Gradient of `ln p(x | w)`, via `sum_y p(y | x, w) score_joint(x, y)`.
pub fn score_marginal(m: &ModelSpec, w: &ParamVec, x: f64) -> Result<[f64; D]> {
    m.check_observation(x)?;
    Ok(score_marginal_unchecked(m, w, x))
}

#[inline]
pub(crate) fn score_marginal_unchecked(m: &ModelSpec, w: &ParamVec, x: f64) -> [f64; D] {
    let lc = log_conditional_unchecked(m, w, x);
    let (r0, r1) = (exp(lc[0]), exp(lc[1]));
    let s0 = score_joint_unchecked(m, w, x, 0);
    let s1 = score_joint_unchecked(m, w, x, 1);
    core::array::from_fn(|i| r0 * s0[i] + r1 * s1[i])
}

/// Gradient of `ln p(y | x, w)`.
pub fn score_conditional(m: &ModelSpec, w: &ParamVec, x: f64, y: usize) -> Result<[f64; D]> {
    let sj = score_joint(m, w, x, y)?;
    let sm = score_marginal_unchecked(m, w, x);
    Ok(core::array::from_fn(|i| sj[i] - sm[i]))
}

/// Draws `n` i.i.d. labelled pairs from `p(x, y | w)`.
///
/// Per pair: one uniform for the label (`y = 0` iff `u < a`), then one draw
/// from the component. The output is a deterministic function of the stream.
pub fn sample_joint<R: Rng + ?Sized>(m: &ModelSpec, w: &ParamVec, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    match m.family() {
        Family::BinomialMixture { trials } => {
            let comps = [
                Binomial::new(trials as u64, w.theta(0))
                    .map_err(|e| Error::Domain(format!("{e}")))?,
                Binomial::new(trials as u64, w.theta(1))
                    .map_err(|e| Error::Domain(format!("{e}")))?,
            ];
            for _ in 0..n {
                let y = label_draw(w, rng);
                ys.push(y);
                xs.push(comps[y].sample(rng) as f64);
            }
        }
        Family::GaussianMixture1D => {
            for _ in 0..n {
                let y = label_draw(w, rng);
                ys.push(y);
                let z: f64 = StandardNormal.sample(rng);
                xs.push(w.theta(y) + z);
            }
        }
    }
    Ok(Dataset { xs, ys: Some(ys) })
}

#[inline]
fn label_draw<R: Rng + ?Sized>(w: &ParamVec, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < w.weight() {
        0
    } else {
        1
    }
}

/// The label permutation of `w`: `(1 - a, θ₂, θ₁)`.
pub fn swap_labels(w: &ParamVec) -> ParamVec {
    let v = w.values();
    ParamVec([1.0 - v[0], v[2], v[1]])
}

/// Total-variation distance between the two component distributions.
pub fn component_distance(m: &ModelSpec, w: &ParamVec) -> f64 {
    match m.family() {
        Family::BinomialMixture { trials } => {
            let mut tv = 0.0;
            for x in 0..=trials {
                let x = x as f64;
                let p = exp(m.component_log_density(x, w.theta(0)));
                let q = exp(m.component_log_density(x, w.theta(1)));
                tv += abs(p - q);
            }
            0.5 * tv
        }
        // TV(N(μ₁,1), N(μ₂,1)) = 2Φ(|Δ|/2) − 1 = erf(|Δ| / (2√2)).
        Family::GaussianMixture1D => {
            erf(abs(w.theta(0) - w.theta(1)) / (2.0 * core::f64::consts::SQRT_2))
        }
    }
}

/// Checks the regularity conditions: positive mixing weights, distinct
/// components and a positive definite marginal Fisher matrix.
pub fn validate_identifiability(m: &ModelSpec, w: &ParamVec) -> IdentifiabilityReport {
    let a = w.weight();
    let min_mixing = a.min(1.0 - a);
    let component_distance = component_distance(m, w);
    let min_eig_ix = fisher::fisher_marginal(m, w)
        .and_then(|ix| sym_eigenvalues(&ix))
        .map(|e| e.min())
        .unwrap_or(f64::NAN);
    let ok = min_mixing > MIN_MIXING
        && component_distance > MIN_COMPONENT_DISTANCE
        && min_eig_ix > MIN_EIG_IX;
    IdentifiabilityReport {
        min_mixing,
        component_distance,
        min_eig_ix,
        ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log_sum_exp;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(m: &ModelSpec, v: [f64; 3]) -> ParamVec {
        ParamVec::new(m, v).unwrap()
    }

    fn ref_b_star() -> (ModelSpec, ParamVec) {
        let m = ModelSpec::ref_b();
        (m, pv(&m, REF_B_TRUE))
    }

    #[test]
    fn fair_coin_joint() {
        let m = ModelSpec::ref_b();
        let w = pv(&m, [0.5, 0.5, 0.5]);
        let got = joint_log_density(&m, &w, 0.0, 0).unwrap();
        assert!((got - (0.5f64 * 0.125).ln()).abs() < 1e-15);
    }

    #[test]
    fn binomial_joint_normalizes() {
        let (m, w) = ref_b_star();
        let mut total = 0.0;
        for x in m.support().unwrap() {
            for y in 0..K {
                total += joint_log_density(&m, &w, x, y).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collapsed_gaussian_components() {
        let m = ModelSpec::ref_c();
        let w = pv(&m, [0.5, 0.0, 0.0]);
        let got = joint_log_density(&m, &w, 0.0, 1).unwrap();
        let want = 0.5f64.ln() - 0.5 * (2.0 * core::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn equal_components_collapse_the_mixture() {
        let m = ModelSpec::ref_b();
        for p in [0.1, 0.37, 0.9] {
            let w = pv(&m, [0.5, p, p]);
            for x in 0..=3 {
                let x = x as f64;
                let want = m.ln_choose(x) + x * p.ln() + (3.0 - x) * (1.0 - p).ln();
                assert!((marginal_log_density(&m, &w, x).unwrap() - want).abs() < 1e-14);
                let r = latent_conditional(&m, &w, x).unwrap();
                assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
                let s = score_marginal(&m, &w, x).unwrap();
                assert!(s[0].abs() < 1e-14);
            }
            let r = validate_identifiability(&m, &w);
            assert!(!r.ok);
            assert_eq!(r.component_distance, 0.0);
        }
    }

    #[test]
    fn marginal_at_x3_matches_direct_arithmetic() {
        let (m, w) = ref_b_star();
        // 0.5 * 0.8^3 + 0.5 * 0.25^3
        let direct: f64 = 0.5 * 0.512 + 0.5 * 0.015625;
        let got = marginal_log_density(&m, &w, 3.0).unwrap();
        assert!((got - direct.ln()).abs() < 1e-14, "{got} vs {}", direct.ln());
        // Frozen golden value.
        assert!((got - (-1.3325166554394194f64)).abs() < 1e-14, "{got:.17}");
    }

    #[test]
    fn conditional_at_x0_matches_bayes_rule() {
        let (m, w) = ref_b_star();
        // p(x=0|y=0) = 0.2^3 = 0.008, p(x=0|y=1) = 0.75^3 = 0.421875.
        let r = latent_conditional(&m, &w, 0.0).unwrap();
        let want0 = 0.008 / (0.008 + 0.421875);
        assert!((r[0] - want0).abs() < 1e-15);
        assert!((r[1] - (1.0 - want0)).abs() < 1e-15);
        assert!((r[0] - 0.018610061064262867).abs() < 1e-15, "{:.17}", r[0]);
    }

    #[test]
    fn degenerate_mixing_limits() {
        let m = ModelSpec::ref_b();
        let w = pv(&m, [1.0 - 1e-12, 0.3, 0.7]);
        let r = latent_conditional(&m, &w, 1.0).unwrap();
        assert!(r[0] > 1.0 - 1e-11 && r[1] < 1e-11);

        let g = ModelSpec::ref_c();
        let w = pv(&g, [1.0 - 1e-12, 0.7, -3.0]);
        let got = marginal_log_density(&g, &w, 0.2).unwrap();
        let want = -0.5 * LN_2PI - 0.5 * 0.25;
        assert!((got - want).abs() < 1e-11);
    }

    #[test]
    fn score_examples() {
        let m = ModelSpec::ref_b();
        let w = pv(&m, [0.3, 0.6, 0.2]);
        assert_eq!(score_joint(&m, &w, 2.0, 0).unwrap()[0], 1.0 / 0.3);
        assert_eq!(score_joint(&m, &w, 2.0, 1).unwrap()[1], 0.0);
        let g = ModelSpec::ref_c();
        let w = pv(&g, [0.3, 0.6, -0.2]);
        assert_eq!(score_joint(&g, &w, 1.5, 0).unwrap()[1], 1.5 - 0.6);
    }

    #[test]
    fn domain_checks() {
        let m = ModelSpec::ref_b();
        assert!(ParamVec::new(&m, [0.0, 0.5, 0.5]).is_err());
        assert!(ParamVec::new(&m, [0.5, 1.0, 0.5]).is_err());
        assert!(ParamVec::from_slice(&m, &[0.5, 0.5]).is_err());
        assert!(ParamVec::new(&ModelSpec::ref_c(), [0.5, -40.0, 1e3]).is_ok());
        let w = pv(&m, REF_B_TRUE);
        assert!(joint_log_density(&m, &w, 4.0, 0).is_err());
        assert!(joint_log_density(&m, &w, 1.5, 0).is_err());
        assert!(joint_log_density(&m, &w, 1.0, 2).is_err());
        assert!(ModelSpec::binomial(2).is_err());
        assert!(Dataset::new(vec![1.0], Some(vec![0, 1])).is_err());
        assert!(Dataset::new(vec![1.0], Some(vec![2])).is_err());
        assert_eq!(Dataset::unlabelled(vec![1.0]).labels(), Err(Error::MissingLabels));
    }

    #[test]
    fn identifiability_reports() {
        let (m, w) = ref_b_star();
        let r = validate_identifiability(&m, &w);
        assert!(r.ok, "{r:?}");
        assert_eq!(r.min_mixing, 0.5);
        let g = ModelSpec::ref_c();
        let r = validate_identifiability(&g, &pv(&g, REF_C_TRUE));
        assert!(r.ok, "{r:?}");
        assert!((r.component_distance - libm::erf(2.5 / (2.0 * 2f64.sqrt()))).abs() < 1e-15);
    }

    #[test]
    fn swap_is_an_involution_preserving_the_marginal() {
        let (m, w) = ref_b_star();
        let s = swap_labels(&w);
        assert_eq!(s.values(), [0.5, 0.25, 0.8]);
        assert_eq!(swap_labels(&s), w);
        for x in 0..=3 {
            let x = x as f64;
            let a = marginal_log_density(&m, &w, x).unwrap();
            let b = marginal_log_density(&m, &s, x).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let (m, w) = ref_b_star();
        let a = sample_joint(&m, &w, 500, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_joint(&m, &w, 500, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let g = ModelSpec::ref_c();
        let wg = pv(&g, REF_C_TRUE);
        let a = sample_joint(&g, &wg, 500, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_joint(&g, &wg, 500, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   b.xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(sample_joint(&m, &w, 0, &mut ChaCha8Rng::seed_from_u64(1)), Err(Error::EmptyData));
    }

    #[test]
    fn sampler_matches_exact_pmf() {
        let (m, w) = ref_b_star();
        let n = 1_000_000;
        let d = sample_joint(&m, &w, n, &mut ChaCha8Rng::seed_from_u64(2024)).unwrap();
        let ones = d.labels().unwrap().iter().filter(|&&y| y == 0).count() as f64 / n as f64;
        assert!((ones - 0.5).abs() < 3.0 * 0.5 / 1000.0);
        let mut counts = [0usize; 4];
        for &x in &d.xs {
            counts[x as usize] += 1;
        }
        for (x, &c) in counts.iter().enumerate() {
            let p = marginal_log_density(&m, &w, x as f64).unwrap().exp();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * se, "x = {x}");
        }
        let sure = pv(&m, [1.0 - 1e-15, 0.4, 0.6]);
        let d = sample_joint(&m, &sure, 10_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(d.labels().unwrap().iter().all(|&y| y == 0));
    }

    #[test]
    fn marginal_score_has_zero_mean() {
        let (m, w) = ref_b_star();
        let mut mean = [0.0; 3];
        for x in m.support().unwrap() {
            let p = marginal_log_density(&m, &w, x).unwrap().exp();
            let s = score_marginal(&m, &w, x).unwrap();
            for i in 0..3 {
                mean[i] += p * s[i];
            }
        }
        assert!(mean.iter().all(|v| v.abs() < 1e-14), "{mean:?}");
    }

    fn fd_gradient(f: impl Fn([f64; 3]) -> f64, w: [f64; 3]) -> [f64; 3] {
        let h = 1e-6;
        core::array::from_fn(|i| {
            let mut up = w;
            let mut dn = w;
            up[i] += h;
            dn[i] -= h;
            (f(up) - f(dn)) / (2.0 * h)
        })
    }

    fn point_strategy(gaussian: bool) -> impl Strategy<Value = ([f64; 3], f64, usize)> {
        if gaussian {
            (0.05f64..0.95, -3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0, 0usize..2)
                .prop_map(|(a, b, c, x, y)| ([a, b, c], x, y))
                .boxed()
        } else {
            (0.05f64..0.95, 0.05f64..0.95, 0.05f64..0.95, 0u32..4, 0usize..2)
                .prop_map(|(a, b, c, x, y)| ([a, b, c], x as f64, y))
                .boxed()
        }
    }

    fn check_scores(m: &ModelSpec, v: [f64; 3], x: f64, y: usize) -> Result<(), TestCaseError> {
        let w = ParamVec::new(m, v).unwrap();
        let sj = score_joint(m, &w, x, y).unwrap();
        let fj = fd_gradient(|u| joint_log_density(m, &ParamVec::new(m, u).unwrap(), x, y).unwrap(), v);
        let sm = score_marginal(m, &w, x).unwrap();
        let fm = fd_gradient(|u| marginal_log_density(m, &ParamVec::new(m, u).unwrap(), x).unwrap(), v);
        for i in 0..3 {
            prop_assert!((sj[i] - fj[i]).abs() < 1e-6, "joint {i}: {} vs {}", sj[i], fj[i]);
            prop_assert!((sm[i] - fm[i]).abs() < 1e-6, "marginal {i}: {} vs {}", sm[i], fm[i]);
        }
        // Bayes consistency and conditional normalization.
        let lc = latent_log_conditional(m, &w, x).unwrap();
        let diff = joint_log_density(m, &w, x, y).unwrap() - marginal_log_density(m, &w, x).unwrap();
        prop_assert!((diff - lc[y]).abs() < 1e-12);
        prop_assert!(log_sum_exp(&lc).abs() < 1e-12);
        let r = latent_conditional(m, &w, x).unwrap();
        prop_assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn binomial_scores_match_finite_differences((v, x, y) in point_strategy(false)) {
            check_scores(&ModelSpec::ref_b(), v, x, y)?;
        }

        #[test]
        fn gaussian_scores_match_finite_differences((v, x, y) in point_strategy(true)) {
            check_scores(&ModelSpec::ref_c(), v, x, y)?;
        }
    }
}
