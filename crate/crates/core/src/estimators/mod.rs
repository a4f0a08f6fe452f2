//! Estimated latent distributions: ML plug-in and Bayes.

mod bayes;
mod em;
mod grid;
mod prior;

pub use bayes::{
    alpha_sites, bayes_latent_logprob, bayes_latent_logprob_mixture, bayes_type2_marginal_enumerated,
    bayes_type2_marginal_logprob, bayes_type2p_logprob, bayes_type3_predictive, bayes_type3p_logprob,
    evidence_refinement, has_closed_form, log_evidence_complete, log_evidence_complete_closed_form,
    log_evidence_marginal, log_evidence_marginal_enumerated, BayesFit, LatentPosterior, RefinementReport,
    ENUMERATION_LIMIT, REFINEMENT_TOLERANCE,
};
pub use em::{
    joint_log_likelihood, marginal_log_likelihood, mle_joint, mle_marginal, mle_marginal_with, EmOptions,
    EmResult, DOMAIN_CLAMP,
};
pub use grid::{ParamGrid, PosteriorGrid, SiteTerms, DEFAULT_NODES};
pub use prior::{CoordPrior, Prior, Support};

use crate::math::{exp, ln};
use crate::model::{log_conditional_unchecked, swap_labels, Dataset, ModelSpec, ParamVec, K};
use crate::{Error, Result};

/// How a [`LatentPosterior`] evaluates `p(Y^n | X^n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatentMethod {
    Ml,
    BayesEvidence,
    BayesQuadrature,
    BayesEnumeration,
}

/// The label permutation of `w_hat` closest to `w_star` in Euclidean
/// distance. Ties keep `w_hat` as given.
pub fn align_labels(w_hat: &ParamVec, w_star: &ParamVec) -> ParamVec {
    let swapped = swap_labels(w_hat);
    if swapped.distance(w_star) < w_hat.distance(w_star) {
        swapped
    } else {
        *w_hat
    }
}

/// `Σ_i ln p(y_i | x_i, ŵ)`: the plug-in latent log-probability.
pub fn ml_latent_logprob(m: &ModelSpec, w_hat: &ParamVec, data: &Dataset) -> Result<f64> {
    let ys = data.labels()?;
    if ys.len() != data.xs.len() {
        return Err(Error::DimensionMismatch {
            expected: data.xs.len(),
            found: ys.len(),
        });
    }
    let mut total = 0.0;
    for (&x, &y) in data.xs.iter().zip(ys) {
        m.check_observation(x)?;
        if y >= K {
            return Err(Error::Domain(alloc::format!("label {y} outside 0..{K}")));
        }
        total += log_conditional_unchecked(m, w_hat, x)[y];
    }
    Ok(total)
}

/// `ln q(Y^n | X^n)`: the factorized true label distribution.
pub fn true_latent_logprob(m: &ModelSpec, w_star: &ParamVec, data: &Dataset) -> Result<f64> {
    ml_latent_logprob(m, w_star, data)
}

/// `Σ_y q(y | x) ln(q(y | x) / p(y | x, w))`, per site.
pub fn conditional_kl(m: &ModelSpec, w_star: &ParamVec, w: &ParamVec, x: f64) -> Result<f64> {
    m.check_observation(x)?;
    let lq = log_conditional_unchecked(m, w_star, x);
    let lp = log_conditional_unchecked(m, w, x);
    Ok(kl_from_logs(&lq, &lp))
}

/// `Σ_y q_y (ln q_y − ln p_y)` from log-probabilities, skipping `q_y = 0`.
pub fn kl_from_logs(lq: &[f64; K], lp: &[f64; K]) -> f64 {
    lq.iter()
        .zip(lp)
        .map(|(&a, &b)| {
            let q = exp(a);
            if q == 0.0 {
                0.0
            } else {
                q * (a - b)
            }
        })
        .sum()
}

/// `ln` of a probability vector, entrywise.
pub fn log_probs(p: &[f64; K]) -> [f64; K] {
    [ln(p[0]), ln(p[1])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{REF_B_TRUE, REF_C_TRUE};

    #[test]
    fn alignment_undoes_switching() {
        let m = ModelSpec::ref_b();
        let w = ParamVec::new(&m, REF_B_TRUE).unwrap();
        assert_eq!(align_labels(&swap_labels(&w), &w), w);
        assert_eq!(align_labels(&w, &w), w);
        // Equidistant: w_star is a fixed point of the swap.
        let sym = ParamVec::new(&m, [0.5, 0.5, 0.5]).unwrap();
        let off = ParamVec::new(&m, [0.6, 0.3, 0.5]).unwrap();
        assert_eq!(swap_labels(&off).distance(&sym), off.distance(&sym));
        assert_eq!(align_labels(&off, &sym), off);
    }

    #[test]
    fn ml_logprob_basics() {
        let m = ModelSpec::ref_b();
        let w = ParamVec::new(&m, REF_B_TRUE).unwrap();
        let d = Dataset::new(vec![1.0], Some(vec![1])).unwrap();
        let v = ml_latent_logprob(&m, &w, &d).unwrap();
        let direct = crate::model::latent_log_conditional(&m, &w, 1.0).unwrap()[1];
        assert_eq!(v, direct);
        let empty = Dataset::new(vec![], Some(vec![])).unwrap();
        assert_eq!(true_latent_logprob(&m, &w, &empty).unwrap(), 0.0);
        assert_eq!(
            ml_latent_logprob(&m, &w, &Dataset::unlabelled(vec![1.0])),
            Err(Error::MissingLabels)
        );
        let sym = ParamVec::new(&m, [0.5, 0.4, 0.4]).unwrap();
        let d = Dataset::new(vec![0.0, 2.0, 3.0], Some(vec![0, 1, 1])).unwrap();
        assert!((true_latent_logprob(&m, &sym, &d).unwrap() - 3.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ml_latent_normalizes() {
        let g = ModelSpec::ref_c();
        let w = ParamVec::new(&g, REF_C_TRUE).unwrap();
        let xs = [-0.3, 1.2, 2.0, -2.5, 0.1, 0.7, -1.0, 3.3, 0.0, 1.0];
        let mut terms = alloc::vec::Vec::new();
        for mask in 0u32..1 << xs.len() {
            let ys = (0..xs.len()).map(|i| ((mask >> i) & 1) as usize).collect();
            let d = Dataset::new(xs.to_vec(), Some(ys)).unwrap();
            terms.push(ml_latent_logprob(&g, &w, &d).unwrap());
        }
        assert!(crate::log_sum_exp(&terms).abs() < 1e-12);
    }

    #[test]
    fn kl_helpers() {
        let m = ModelSpec::ref_b();
        let w = ParamVec::new(&m, REF_B_TRUE).unwrap();
        assert_eq!(conditional_kl(&m, &w, &w, 2.0).unwrap(), 0.0);
        let v = ParamVec::new(&m, [0.4, 0.7, 0.3]).unwrap();
        assert!(conditional_kl(&m, &w, &v, 2.0).unwrap() > 0.0);
        let p = [0.25, 0.75];
        assert!(kl_from_logs(&log_probs(&p), &log_probs(&p)).abs() < 1e-16);
    }
}
