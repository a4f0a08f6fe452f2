//! Bayes latent posteriors.
//!
//! The Bayes estimate of the labels is the evidence ratio
//!
//! ```text
//! p(Y^n | X^n) = Z(X^n, Y^n) / Z(X^n)
//! ```
//!
//! or, equivalently, the posterior mixture `∫ Π p(y_i | x_i, w) p(w | X^n) dw`.
//! Both are evaluated on a [`ParamGrid`]. For the binomial family with a
//! full-support Beta prior the complete-data evidence also has a closed form,
//! which backs the enumeration oracle for small `n`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, ln_beta};
use crate::model::{Dataset, Family, ModelSpec, ParamVec, K};
use crate::{log_sum_exp, Error, Result};

use super::grid::{ParamGrid, PosteriorGrid, SiteTerms};
use super::prior::{CoordPrior, Prior, Support};
use super::{ml_latent_logprob, LatentMethod};

/// Largest `n` for which label vectors are enumerated (`K^12 = 4096`).
pub const ENUMERATION_LIMIT: usize = 12;

/// Accepted change of the log evidence when the grid is refined 2×.
pub const REFINEMENT_TOLERANCE: f64 = 1e-6;

/// Number of sites `α n`, which must be a positive integer not above `n`.
pub fn alpha_sites(alpha: f64, n: usize) -> Result<usize> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let target = alpha * n as f64;
    let rounded = libm::round(target);
    if abs(target - rounded) > 1e-9 * target.max(1.0) || rounded < 1.0 {
        return Err(Error::AlphaGridMismatch { alpha, n });
    }
    Ok(rounded as usize)
}

fn check_enumerable(n: usize) -> Result<()> {
    if n > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

fn labels_of(data: &Dataset) -> Result<&[usize]> {
    let ys = data.labels()?;
    if ys.len() != data.xs.len() {
        return Err(Error::DimensionMismatch {
            expected: data.xs.len(),
            found: ys.len(),
        });
    }
    Ok(ys)
}

/// Beta shapes of all three coordinates when the complete-data evidence has a
/// closed form: binomial family, full support, Beta priors throughout.
fn conjugate_shapes(m: &ModelSpec, prior: &Prior) -> Option<[(f64, f64); 3]> {
    if !matches!(m.family(), Family::BinomialMixture { .. }) || prior.support != Support::Full {
        return None;
    }
    let mut out = [(0.0, 0.0); 3];
    for (o, c) in out.iter_mut().zip(&prior.coords) {
        match *c {
            CoordPrior::Beta { alpha, beta } => *o = (alpha, beta),
            CoordPrior::Uniform { .. } => return None,
        }
    }
    Some(out)
}

/// Whether [`log_evidence_complete_closed_form`] applies to this model and prior.
pub fn has_closed_form(m: &ModelSpec, prior: &Prior) -> bool {
    conjugate_shapes(m, prior).is_some()
}

/// `ln Z(X^n, Y^n)` by Beta–binomial conjugacy.
pub fn log_evidence_complete_closed_form(m: &ModelSpec, prior: &Prior, xs: &[f64], ys: &[usize]) -> Result<f64> {
    let shapes = conjugate_shapes(m, prior).ok_or(Error::Unsupported(
        "closed-form evidence needs the binomial family and a full-support Beta prior",
    ))?;
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let trials = m.trials().unwrap_or(0) as f64;
    let mut counts = [0.0; K];
    let mut succ = [0.0; K];
    let mut fail = [0.0; K];
    let mut ln_c = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        m.check_observation(x)?;
        if y >= K {
            return Err(Error::Domain(alloc::format!("label {y} outside 0..{K}")));
        }
        counts[y] += 1.0;
        succ[y] += x;
        fail[y] += trials - x;
        ln_c += m.ln_choose(x);
    }
    Ok(closed_form_from_stats(&shapes, ln_c, &counts, &succ, &fail))
}

fn closed_form_from_stats(
    shapes: &[(f64, f64); 3],
    ln_c: f64,
    counts: &[f64; K],
    succ: &[f64; K],
    fail: &[f64; K],
) -> f64 {
    let (aa, ba) = shapes[0];
    let mut out = ln_c + ln_beta(aa + counts[0], ba + counts[1]) - ln_beta(aa, ba);
    for k in 0..K {
        let (ak, bk) = shapes[1 + k];
        out += ln_beta(ak + succ[k], bk + fail[k]) - ln_beta(ak, bk);
    }
    out
}

/// `ln Z(X^n, Y^n)`: closed form when available, grid quadrature otherwise.
pub fn log_evidence_complete(grid: &ParamGrid, xs: &[f64], ys: &[usize]) -> Result<f64> {
    if has_closed_form(grid.model(), grid.prior()) {
        log_evidence_complete_closed_form(grid.model(), grid.prior(), xs, ys)
    } else {
        grid.log_integral(&SiteTerms::complete(xs, ys))
    }
}

/// `ln Z(X^n)` by grid quadrature.
pub fn log_evidence_marginal(grid: &ParamGrid, xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyData);
    }
    grid.log_integral(&SiteTerms::marginal(xs))
}

/// Visits every label vector of length `n` (bit `i` of the mask is `y_i`).
fn for_each_labeling(n: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut ys = vec![0usize; n];
    for mask in 0u32..(1u32 << n) {
        for (i, y) in ys.iter_mut().enumerate() {
            *y = ((mask >> i) & 1) as usize;
        }
        f(&ys)?;
    }
    Ok(())
}

/// Collects `f(Y^n)` over every label vector, where `f` depends on the
/// labelled sites only through the multiset of `(x_i, y_i)` pairs: equal
/// multisets are evaluated once, so the result is the same as calling `f`
/// on every vector but costs one evaluation per distinct label count.
fn enumerate_by_counts(xs: &[f64], mut f: impl FnMut(&[usize]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut seen: BTreeMap<Vec<(u64, usize)>, f64> = BTreeMap::new();
    let mut terms = Vec::with_capacity(1 << xs.len());
    for_each_labeling(xs.len(), |ys| {
        let mut key: Vec<(u64, usize)> = xs.iter().map(|x| x.to_bits()).zip(ys.iter().copied()).collect();
        key.sort_unstable();
        let v = match seen.get(&key) {
            Some(&v) => v,
            None => {
                let v = f(ys)?;
                seen.insert(key, v);
                v
            }
        };
        terms.push(v);
        Ok(())
    })?;
    Ok(terms)
}

/// `ln Σ_{Y^n} Z(X^n, Y^n)` by exhaustive enumeration (`n ≤ 12`).
pub fn log_evidence_marginal_enumerated(grid: &ParamGrid, xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyData);
    }
    check_enumerable(xs.len())?;
    let terms = enumerate_by_counts(xs, |ys| log_evidence_complete(grid, xs, ys))?;
    Ok(log_sum_exp(&terms))
}

/// Log evidence at the grid resolution and at twice the nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementReport {
    pub nodes_per_axis: usize,
    pub coarse: f64,
    pub fine: f64,
    pub change: f64,
    pub tolerance: f64,
}

impl RefinementReport {
    pub fn ok(&self) -> bool {
        self.change <= self.tolerance
    }
}

/// Refinement self-check of `ln Z(X^n)` on `grid`.
pub fn evidence_refinement(grid: &ParamGrid, xs: &[f64]) -> Result<RefinementReport> {
    let coarse = log_evidence_marginal(grid, xs)?;
    let g = grid.nodes_per_axis();
    let fine_grid = ParamGrid::new_untabulated(grid.model(), grid.prior(), 2 * g)?;
    let fine = log_evidence_marginal(&fine_grid, xs)?;
    Ok(RefinementReport {
        nodes_per_axis: g,
        coarse,
        fine,
        change: abs(fine - coarse),
        tolerance: REFINEMENT_TOLERANCE,
    })
}

/// The posterior given `X^n`, with every Bayes latent estimate derived from it.
#[derive(Clone, Debug)]
pub struct BayesFit<'g> {
    xs: Vec<f64>,
    posterior: PosteriorGrid<'g>,
}

impl<'g> BayesFit<'g> {
    pub fn new(grid: &'g ParamGrid, xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(Self {
            xs: xs.to_vec(),
            posterior: grid.posterior(xs)?,
        })
    }

    pub fn grid(&self) -> &'g ParamGrid {
        self.posterior.grid()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn posterior(&self) -> &PosteriorGrid<'g> {
        &self.posterior
    }

    /// `ln Z(X^n)`.
    pub fn log_evidence(&self) -> f64 {
        self.posterior.log_norm()
    }

    fn check_labels(&self, ys: &[usize], expected: usize) -> Result<()> {
        if ys.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: ys.len(),
            });
        }
        Ok(())
    }

    /// Evidence-ratio form `ln Z(X^n, Y^n) − ln Z(X^n)`.
    pub fn latent_logprob(&self, ys: &[usize]) -> Result<f64> {
        self.head_logprob(ys)
    }

    /// Posterior-mixture form `ln E_post[Π p(y_i | x_i, w)]`.
    pub fn latent_logprob_mixture(&self, ys: &[usize]) -> Result<f64> {
        self.check_labels(ys, self.xs.len())?;
        self.posterior.log_expect(&SiteTerms::conditional(&self.xs, ys))
    }

    /// `ln p(Y_1 | X^n)` for the labels `ys` of the first `ys.len()` sites,
    /// the rest left unlabelled. With every site labelled this is
    /// [`latent_logprob`](Self::latent_logprob), evaluated identically.
    pub fn head_logprob(&self, ys: &[usize]) -> Result<f64> {
        let n = self.xs.len();
        if ys.len() > n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: ys.len(),
            });
        }
        let h = ys.len();
        let terms = SiteTerms {
            joint: self.xs[..h].iter().copied().zip(ys.iter().copied()).collect(),
            marginal: self.xs[h..].to_vec(),
            conditional: Vec::new(),
        };
        Ok(self.grid().log_integral(&terms)? - self.log_evidence())
    }

    /// Log-probabilities `ln p(y_i = k | X^n)` of one in-sample label.
    pub fn site_marginal(&self, i: usize) -> Result<[f64; K]> {
        let x = *self.xs.get(i).ok_or(Error::DimensionMismatch {
            expected: self.xs.len(),
            found: i + 1,
        })?;
        let mut out = [0.0; K];
        for (y, o) in out.iter_mut().enumerate() {
            *o = self.posterior.log_expect(&SiteTerms::conditional(&[x], &[y]))?;
        }
        Ok(out)
    }

    /// Predictive label distribution `p(y | x_new, X^n)`.
    pub fn predictive(&self, x_new: f64) -> Result<[f64; K]> {
        self.posterior.predictive_conditional(x_new)
    }

    /// `ln p(x | X^n)`.
    pub fn predictive_log_marginal(&self, x: f64) -> Result<f64> {
        self.posterior.predictive_log_marginal(x)
    }

    /// `ln p(Y_2 | X_2, X^n)` for future sites.
    pub fn future_logprob(&self, xs_future: &[f64], ys_future: &[usize]) -> Result<f64> {
        self.check_labels(ys_future, xs_future.len())?;
        self.posterior.log_expect(&SiteTerms::conditional(xs_future, ys_future))
    }
}

/// The evidence ratio computed from scratch: `ln Z(X^n, Y^n) − ln Z(X^n)` on `grid`.
pub fn bayes_latent_logprob(grid: &ParamGrid, data: &Dataset) -> Result<f64> {
    let ys = labels_of(data)?;
    BayesFit::new(grid, &data.xs)?.latent_logprob(ys)
}

/// Posterior-mixture form of [`bayes_latent_logprob`].
pub fn bayes_latent_logprob_mixture(grid: &ParamGrid, data: &Dataset) -> Result<f64> {
    let ys = labels_of(data)?;
    BayesFit::new(grid, &data.xs)?.latent_logprob_mixture(ys)
}

/// `ln p(y_i | X^n)` by the direct evidence path.
pub fn bayes_type2_marginal_logprob(grid: &ParamGrid, xs: &[f64], i: usize) -> Result<[f64; K]> {
    BayesFit::new(grid, xs)?.site_marginal(i)
}

/// `ln p(y_i | X^n)` by summing the enumerated joint over the other labels.
pub fn bayes_type2_marginal_enumerated(grid: &ParamGrid, xs: &[f64], i: usize) -> Result<[f64; K]> {
    if i >= xs.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: i + 1,
        });
    }
    check_enumerable(xs.len())?;
    let mut per_label: [Vec<f64>; K] = [Vec::new(), Vec::new()];
    for_each_labeling(xs.len(), |ys| {
        per_label[ys[i]].push(log_evidence_complete(grid, xs, ys)?);
        Ok(())
    })?;
    let l0 = log_sum_exp(&per_label[0]);
    let l1 = log_sum_exp(&per_label[1]);
    let z = crate::log_add_exp(l0, l1);
    Ok([l0 - z, l1 - z])
}

/// Predictive label probabilities at `x_new` given training data `xs`.
pub fn bayes_type3_predictive(grid: &ParamGrid, xs: &[f64], x_new: f64) -> Result<[f64; K]> {
    BayesFit::new(grid, xs)?.predictive(x_new)
}

/// `ln p(Y_1 | X^n)` for the first `α n` labels of `data`.
pub fn bayes_type2p_logprob(grid: &ParamGrid, data: &Dataset, alpha: f64) -> Result<f64> {
    let h = alpha_sites(alpha, data.len())?;
    let ys = data.labels()?;
    if ys.len() < h {
        return Err(Error::MissingLabels);
    }
    BayesFit::new(grid, &data.xs)?.head_logprob(&ys[..h])
}

/// `ln p(Y_2 | X_2, X^n)` for `α n` labelled future sites.
pub fn bayes_type3p_logprob(grid: &ParamGrid, xs_train: &[f64], future: &Dataset, alpha: f64) -> Result<f64> {
    let h = alpha_sites(alpha, xs_train.len())?;
    if future.len() != h {
        return Err(Error::DimensionMismatch {
            expected: h,
            found: future.len(),
        });
    }
    BayesFit::new(grid, xs_train)?.future_logprob(&future.xs, labels_of(future)?)
}

/// An estimated label distribution `p(Y^n | X^n)` ready to be evaluated.
#[derive(Clone, Debug)]
pub enum LatentPosterior<'g> {
    /// Plug-in at the marginal ML estimate.
    Ml { model: ModelSpec, w_hat: ParamVec },
    /// Evidence ratio on the grid.
    BayesEvidence(BayesFit<'g>),
    /// Posterior mixture on the grid.
    BayesQuadrature(BayesFit<'g>),
    /// Evidence ratio with the denominator summed over all label vectors.
    BayesEnumeration {
        grid: &'g ParamGrid,
        xs: Vec<f64>,
        log_evidence: f64,
    },
}

impl<'g> LatentPosterior<'g> {
    pub fn ml(model: &ModelSpec, w_hat: &ParamVec) -> Self {
        LatentPosterior::Ml {
            model: *model,
            w_hat: *w_hat,
        }
    }

    pub fn bayes(method: LatentMethod, grid: &'g ParamGrid, xs: &[f64]) -> Result<Self> {
        match method {
            LatentMethod::Ml => Err(Error::Unsupported("ML posteriors are built with LatentPosterior::ml")),
            LatentMethod::BayesEvidence => Ok(LatentPosterior::BayesEvidence(BayesFit::new(grid, xs)?)),
            LatentMethod::BayesQuadrature => Ok(LatentPosterior::BayesQuadrature(BayesFit::new(grid, xs)?)),
            LatentMethod::BayesEnumeration => Ok(LatentPosterior::BayesEnumeration {
                grid,
                xs: xs.to_vec(),
                log_evidence: log_evidence_marginal_enumerated(grid, xs)?,
            }),
        }
    }

    pub fn method(&self) -> LatentMethod {
        match self {
            LatentPosterior::Ml { .. } => LatentMethod::Ml,
            LatentPosterior::BayesEvidence(_) => LatentMethod::BayesEvidence,
            LatentPosterior::BayesQuadrature(_) => LatentMethod::BayesQuadrature,
            LatentPosterior::BayesEnumeration { .. } => LatentMethod::BayesEnumeration,
        }
    }

    /// `ln p(Y^n | X^n)`. Bayes posteriors require `data.xs` to be the
    /// observations they were built from.
    pub fn log_prob(&self, data: &Dataset) -> Result<f64> {
        let ys = labels_of(data)?;
        let same = |xs: &[f64]| -> Result<()> {
            if xs == data.xs.as_slice() {
                Ok(())
            } else {
                Err(Error::Domain("observations differ from those the posterior was built on".into()))
            }
        };
        match self {
            LatentPosterior::Ml { model, w_hat } => ml_latent_logprob(model, w_hat, data),
            LatentPosterior::BayesEvidence(fit) => {
                same(fit.xs())?;
                fit.latent_logprob(ys)
            }
            LatentPosterior::BayesQuadrature(fit) => {
                same(fit.xs())?;
                fit.latent_logprob_mixture(ys)
            }
            LatentPosterior::BayesEnumeration { grid, xs, log_evidence } => {
                same(xs)?;
                Ok(log_evidence_complete(grid, xs, ys)? - log_evidence)
            }
        }
    }

    /// `Σ_{Y^n} p(Y^n | X^n)` by enumeration; should be 1.
    pub fn enumerated_total(&self, xs: &[f64]) -> Result<f64> {
        check_enumerable(xs.len())?;
        let eval = |ys: &[usize]| self.log_prob(&Dataset::new(xs.to_vec(), Some(ys.to_vec()))?);
        let terms = match self {
            // The plug-in sums per-site terms in site order, so it is
            // evaluated for every vector rather than once per count.
            LatentPosterior::Ml { .. } => {
                let mut terms = Vec::with_capacity(1 << xs.len());
                for_each_labeling(xs.len(), |ys| {
                    terms.push(eval(ys)?);
                    Ok(())
                })?;
                terms
            }
            _ => enumerate_by_counts(xs, eval)?,
        };
        Ok(libm::exp(log_sum_exp(&terms)))
    }
}
