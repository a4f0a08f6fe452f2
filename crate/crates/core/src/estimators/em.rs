//! Expectation–maximization for the marginal likelihood `L_X(w)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, exp};
use crate::model::{log_conditional_unchecked, joint_log_pair, Family, ModelSpec, ParamVec, D};
use crate::{log_add_exp, Error, Result};

/// Unit-interval coordinates are kept this far from `{0, 1}`.
pub const DOMAIN_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    /// Stop once one iteration gains less than this in log-likelihood.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Keep the log-likelihood of every iterate.
    pub record_history: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmResult {
    pub w: ParamVec,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the initial point followed by every iterate.
    pub history: Vec<f64>,
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    v.clamp(DOMAIN_CLAMP, 1.0 - DOMAIN_CLAMP)
}

/// Data reduced to what the E and M steps need: distinct values with counts.
struct Compressed {
    values: Vec<f64>,
    counts: Vec<f64>,
}

fn compress(m: &ModelSpec, xs: &[f64]) -> Result<Compressed> {
    xs.iter().try_for_each(|&x| m.check_observation(x))?;
    match m.family() {
        Family::BinomialMixture { trials } => {
            let mut counts = vec![0.0; trials as usize + 1];
            for &x in xs {
                counts[x as usize] += 1.0;
            }
            let (values, counts) = counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0.0)
                .map(|(x, c)| (x as f64, c))
                .unzip();
            Ok(Compressed { values, counts })
        }
        Family::GaussianMixture1D => Ok(Compressed {
            values: xs.to_vec(),
            counts: vec![1.0; xs.len()],
        }),
    }
}

fn log_likelihood(m: &ModelSpec, w: &ParamVec, data: &Compressed) -> f64 {
    data.values
        .iter()
        .zip(&data.counts)
        .map(|(&x, &c)| {
            let j = joint_log_pair(m, w, x);
            c * log_add_exp(j[0], j[1])
        })
        .sum()
}

/// One EM update.
fn step(m: &ModelSpec, w: &ParamVec, data: &Compressed) -> ParamVec {
    let mut n0 = 0.0;
    let mut n1 = 0.0;
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for (&x, &c) in data.values.iter().zip(&data.counts) {
        let lc = log_conditional_unchecked(m, w, x);
        let r0 = exp(lc[0]);
        let r1 = exp(lc[1]);
        n0 += c * r0;
        n1 += c * r1;
        s0 += c * r0 * x;
        s1 += c * r1 * x;
    }
    let total = n0 + n1;
    let a = clamp_unit(n0 / total);
    // A component with no responsibility keeps its previous parameter.
    let update = |s: f64, nk: f64, old: f64| -> f64 {
        if nk <= 0.0 {
            return old;
        }
        match m.family() {
            Family::BinomialMixture { trials } => clamp_unit(s / (nk * trials as f64)),
            Family::GaussianMixture1D => s / nk,
        }
    };
    ParamVec::new_unchecked([a, update(s0, n0, w.theta(0)), update(s1, n1, w.theta(1))])
}

/// Maximizes the marginal likelihood from `init` with default options.
pub fn mle_marginal(m: &ModelSpec, xs: &[f64], init: &ParamVec) -> Result<ParamVec> {
    Ok(mle_marginal_with(m, xs, init, &EmOptions::default())?.w)
}

pub fn mle_marginal_with(m: &ModelSpec, xs: &[f64], init: &ParamVec, opts: &EmOptions) -> Result<EmResult> {
    if xs.is_empty() {
        return Err(Error::EmptyData);
    }
    let data = compress(m, xs)?;
    let mut w = *init;
    let mut ll = log_likelihood(m, &w, &data);
    if !ll.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut history = Vec::new();
    if opts.record_history {
        history.push(ll);
    }
    for it in 1..=opts.max_iterations {
        let next = step(m, &w, &data);
        let next_ll = log_likelihood(m, &next, &data);
        if !next_ll.is_finite() || next.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: it });
        }
        let gain = next_ll - ll;
        if opts.record_history {
            history.push(next_ll);
        }
        // Clamping can in principle cost a rounding-level decrease; never
        // accept a worse point.
        if gain < 0.0 {
            return Ok(EmResult {
                w,
                log_likelihood: ll,
                iterations: it,
                converged: abs(gain) <= opts.tolerance.max(1e-12 * abs(ll)),
                history,
            });
        }
        w = next;
        ll = next_ll;
        if gain < opts.tolerance {
            return Ok(EmResult {
                w,
                log_likelihood: ll,
                iterations: it,
                converged: true,
                history,
            });
        }
    }
    Ok(EmResult {
        w,
        log_likelihood: ll,
        iterations: opts.max_iterations,
        converged: false,
        history,
    })
}

/// Marginal log-likelihood `ln L_X(w)`.
pub fn marginal_log_likelihood(m: &ModelSpec, w: &ParamVec, xs: &[f64]) -> Result<f64> {
    Ok(log_likelihood(m, w, &compress(m, xs)?))
}

/// Complete-data log-likelihood `ln L_XY(w)`.
pub fn joint_log_likelihood(m: &ModelSpec, w: &ParamVec, xs: &[f64], ys: &[usize]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let mut total = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        total += crate::model::joint_log_density(m, w, x, y)?;
    }
    Ok(total)
}

/// Closed-form complete-data maximizer: label frequency and per-component
/// means, clamped to the open domain.
pub fn mle_joint(m: &ModelSpec, xs: &[f64], ys: &[usize]) -> Result<ParamVec> {
    if xs.is_empty() {
        return Err(Error::EmptyData);
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let mut count = [0.0; 2];
    let mut sum = [0.0; 2];
    for (&x, &y) in xs.iter().zip(ys) {
        m.check_observation(x)?;
        if y >= 2 {
            return Err(Error::Domain(alloc::format!("label {y} outside 0..2")));
        }
        count[y] += 1.0;
        sum[y] += x;
    }
    for (k, &c) in count.iter().enumerate() {
        if c == 0.0 {
            return Err(Error::DegenerateLabels { component: k });
        }
    }
    let n = xs.len() as f64;
    let theta = |k: usize| match m.family() {
        Family::BinomialMixture { trials } => clamp_unit(sum[k] / (count[k] * trials as f64)),
        Family::GaussianMixture1D => sum[k] / count[k],
    };
    let v: [f64; D] = [clamp_unit(count[0] / n), theta(0), theta(1)];
    Ok(ParamVec::new_unchecked(v))
}
