//! One replication of each error functional.

use std::collections::HashMap;

use latentkl_core::estimators::{
    align_labels, alpha_sites, conditional_kl, joint_log_likelihood, kl_from_logs, log_probs,
    marginal_log_likelihood, mle_joint, mle_marginal, true_latent_logprob, BayesFit,
    ml_latent_logprob, ENUMERATION_LIMIT,
};
use latentkl_core::fisher::marginal_expectation;
use latentkl_core::model::{latent_log_conditional, marginal_log_density, sample_joint, Dataset, ParamVec, K};
use latentkl_core::Error as CoreError;
use rand_chacha::ChaCha8Rng;

use super::{Experiment, Functional, Job, Method};
use crate::error::{Error, Result};

type CoreResult<T> = std::result::Result<T, CoreError>;

/// Rejects jobs that cannot run before any replication starts.
pub(super) fn check_job(exp: &Experiment, job: &Job, n: usize) -> Result<()> {
    let ml_only = matches!(
        job.functional,
        Functional::TrainingError | Functional::TrainingErrorComplete
    );
    if ml_only && job.method == Method::Bayes {
        return Err(Error::Unsupported {
            functional: job.functional.name(),
            method: job.method.name(),
        });
    }
    if job.functional.uses_alpha() {
        alpha_sites(job.alpha, n)?;
    }
    if job.method == Method::Bayes {
        exp.grid()?;
    }
    Ok(())
}

/// Marginal ML estimate from `w*`, label-aligned to `w*`.
fn ml_fit(exp: &Experiment, xs: &[f64]) -> CoreResult<ParamVec> {
    let w = mle_marginal(exp.model(), xs, exp.w_star())?;
    Ok(align_labels(&w, exp.w_star()))
}

/// `Σ_i KL(q(·|x_i) ‖ p(·|x_i, ŵ))`: the exact inner sum for a factorized estimate.
fn ml_site_kl_sum(exp: &Experiment, w_hat: &ParamVec, xs: &[f64]) -> CoreResult<f64> {
    xs.iter()
        .try_fold(0.0, |acc, &x| Ok(acc + conditional_kl(exp.model(), exp.w_star(), w_hat, x)?))
}

/// Factorized ML error over the labelled sites of `data`, per site.
fn ml_label_error(exp: &Experiment, w_hat: &ParamVec, data: &Dataset) -> CoreResult<f64> {
    let h = data.len() as f64;
    if exp.rao_blackwell {
        Ok(ml_site_kl_sum(exp, w_hat, &data.xs)? / h)
    } else {
        let lq = true_latent_logprob(exp.model(), exp.w_star(), data)?;
        Ok((lq - ml_latent_logprob(exp.model(), w_hat, data)?) / h)
    }
}

/// `(ln q(Y_1 | X_1) − ln p(Y_1 | X^n)) / |Y_1|` for the head sites of `data`.
fn bayes_head_error(exp: &Experiment, fit: &BayesFit<'_>, data: &Dataset, h: usize) -> CoreResult<f64> {
    let head = data.slice(0..h);
    let lq = true_latent_logprob(exp.model(), exp.w_star(), &head)?;
    Ok((lq - fit.head_logprob(head.labels()?)?) / h as f64)
}

fn finite(v: f64, what: &str) -> CoreResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::Domain(format!("non-finite {what}")))
    }
}

/// `E_{q(x)}[g(x)]` for a fallible `g`, with the first error reported.
fn expect_over_q(exp: &Experiment, mut g: impl FnMut(f64) -> CoreResult<f64>) -> CoreResult<f64> {
    let mut err = None;
    let v = marginal_expectation(exp.model(), exp.w_star(), |x| match g(x) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    match err {
        Some(e) => Err(e),
        None => finite(v, "expectation"),
    }
}

/// Predictive label distributions for repeated `x` values (finite support).
struct PredictiveCache<'a, 'g> {
    fit: &'a BayesFit<'g>,
    cache: HashMap<u64, [f64; K]>,
}

impl<'a, 'g> PredictiveCache<'a, 'g> {
    fn new(fit: &'a BayesFit<'g>) -> Self {
        Self {
            fit,
            cache: HashMap::new(),
        }
    }

    fn log_predictive(&mut self, x: f64) -> CoreResult<[f64; K]> {
        if let Some(v) = self.cache.get(&x.to_bits()) {
            return Ok(*v);
        }
        let v = log_probs(&self.fit.predictive(x)?);
        self.cache.insert(x.to_bits(), v);
        Ok(v)
    }
}

/// Fits shared by every job evaluated on one dataset, built on first use.
struct Fits<'e> {
    ml: Option<CoreResult<ParamVec>>,
    bayes: Option<CoreResult<BayesFit<'e>>>,
}

impl<'e> Fits<'e> {
    fn new() -> Self {
        Self { ml: None, bayes: None }
    }

    fn ml(&mut self, exp: &Experiment, xs: &[f64]) -> CoreResult<ParamVec> {
        self.ml.get_or_insert_with(|| ml_fit(exp, xs)).clone()
    }

    fn bayes(&mut self, exp: &'e Experiment, xs: &[f64]) -> CoreResult<&BayesFit<'e>> {
        self.bayes
            .get_or_insert_with(|| BayesFit::new(exp.grid()?, xs))
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// One replication of `job` at sample size `n`: draws `(X^n, Y^n)` (and future
/// sites where needed) from `rng` and returns the per-label error.
pub fn replicate(exp: &Experiment, job: &Job, n: usize, rng: &mut ChaCha8Rng) -> CoreResult<f64> {
    let data = sample_joint(exp.model(), exp.w_star(), n, rng)?;
    evaluate(exp, job, n, &data, &mut Fits::new(), rng)
}

/// Every job of `jobs` on one shared draw of `(X^n, Y^n)`, fitting each method
/// once. Each job continues from its own copy of the stream after the draw,
/// so its value equals [`replicate`] of that job alone on the same stream.
pub fn replicate_jobs(exp: &Experiment, jobs: &[Job], n: usize, rng: &mut ChaCha8Rng) -> Vec<CoreResult<f64>> {
    let data = match sample_joint(exp.model(), exp.w_star(), n, rng) {
        Ok(d) => d,
        Err(e) => return jobs.iter().map(|_| Err(e.clone())).collect(),
    };
    let mut fits = Fits::new();
    jobs.iter()
        .map(|job| evaluate(exp, job, n, &data, &mut fits, &mut rng.clone()))
        .collect()
}

fn evaluate<'e>(
    exp: &'e Experiment,
    job: &Job,
    n: usize,
    data: &Dataset,
    fits: &mut Fits<'e>,
    rng: &mut ChaCha8Rng,
) -> CoreResult<f64> {
    let m = exp.model();
    let w_star = exp.w_star();
    let value = match job.method {
        Method::Ml => {
            let w_hat = fits.ml(exp, &data.xs)?;
            match job.functional {
                Functional::TypeI | Functional::TypeII => ml_label_error(exp, &w_hat, data)?,
                Functional::TypeIII => expect_over_q(exp, |x| conditional_kl(m, w_star, &w_hat, x))?,
                Functional::TypeIIp => {
                    let h = alpha_sites(job.alpha, n)?;
                    ml_label_error(exp, &w_hat, &data.slice(0..h))?
                }
                Functional::TypeIIIp => {
                    let h = alpha_sites(job.alpha, n)?;
                    let future = sample_joint(m, w_star, h, rng)?;
                    ml_label_error(exp, &w_hat, &future)?
                }
                Functional::Generalization => expect_over_q(exp, |x| {
                    Ok(marginal_log_density(m, w_star, x)? - marginal_log_density(m, &w_hat, x)?)
                })?,
                Functional::TrainingError => {
                    let lq = marginal_log_likelihood(m, w_star, &data.xs)?;
                    (lq - marginal_log_likelihood(m, &w_hat, &data.xs)?) / n as f64
                }
                Functional::TrainingErrorComplete => {
                    let ys = data.labels()?;
                    let w_xy = mle_joint(m, &data.xs, ys)?;
                    let lq = joint_log_likelihood(m, w_star, &data.xs, ys)?;
                    (lq - joint_log_likelihood(m, &w_xy, &data.xs, ys)?) / n as f64
                }
            }
        }
        Method::Bayes => {
            if matches!(
                job.functional,
                Functional::TrainingError | Functional::TrainingErrorComplete
            ) {
                return Err(CoreError::Unsupported("training error is defined for ML only"));
            }
            let fit = fits.bayes(exp, &data.xs)?;
            match job.functional {
                Functional::TypeI => bayes_head_error(exp, fit, data, n)?,
                Functional::TypeIIp => bayes_head_error(exp, fit, data, alpha_sites(job.alpha, n)?)?,
                Functional::TypeII => {
                    let mut cache = PredictiveCache::new(fit);
                    let mut total = 0.0;
                    for &x in &data.xs {
                        let lq = latent_log_conditional(m, w_star, x)?;
                        total += kl_from_logs(&lq, &cache.log_predictive(x)?);
                    }
                    total / n as f64
                }
                Functional::TypeIII => expect_over_q(exp, |x| {
                    let lq = latent_log_conditional(m, w_star, x)?;
                    Ok(kl_from_logs(&lq, &log_probs(&fit.predictive(x)?)))
                })?,
                Functional::TypeIIIp => {
                    let h = alpha_sites(job.alpha, n)?;
                    let future = sample_joint(m, w_star, h, rng)?;
                    let lq = true_latent_logprob(m, w_star, &future)?;
                    (lq - fit.future_logprob(&future.xs, future.labels()?)?) / h as f64
                }
                Functional::Generalization => expect_over_q(exp, |x| {
                    Ok(marginal_log_density(m, w_star, x)? - fit.predictive_log_marginal(x)?)
                })?,
                Functional::TrainingError | Functional::TrainingErrorComplete => unreachable!("rejected above"),
            }
        }
    };
    finite(value, job.functional.name())
}

/// The exact inner sum of the Type I error for given observations:
/// `(1/n) Σ_{Y^n} q(Y^n | X^n) ln(q(Y^n | X^n) / p(Y^n | X^n))`, by enumeration
/// of all label vectors (`n ≤ 12`).
pub fn exact_type1_inner(exp: &Experiment, method: Method, xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n > ENUMERATION_LIMIT {
        return Err(CoreError::EnumerationTooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        }
        .into());
    }
    let m = exp.model();
    let fit = match method {
        Method::Ml => None,
        Method::Bayes => Some(BayesFit::new(exp.grid()?, xs)?),
    };
    let w_hat = ml_fit(exp, xs)?;
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        let ys: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let data = Dataset::new(xs.to_vec(), Some(ys))?;
        let lq = true_latent_logprob(m, exp.w_star(), &data)?;
        let lp = match &fit {
            None => ml_latent_logprob(m, &w_hat, &data)?,
            Some(fit) => fit.latent_logprob(data.labels()?)?,
        };
        total += lq.exp() * (lq - lp);
    }
    Ok(total / n as f64)
}
