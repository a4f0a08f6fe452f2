//! Convergence studies: `n · D̂(n)` against the dominant-order coefficient.

use latentkl_core::estimators::{alpha_sites, evidence_refinement, RefinementReport};
use latentkl_core::model::sample_joint;
use latentkl_core::theory::coefficient_report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{estimate_jobs, replication_rng, ErrorEstimate, Experiment, Functional, Job, Method, Run, Runner};
use crate::error::{Error, Result};

/// Relative half-width of the pass band; the band is at least three standard errors.
pub const RELATIVE_BAND: f64 = 0.05;

/// Bootstrap resamples for the sign confidence of a paired difference.
pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// Minimum number of sample sizes in a study.
pub const MIN_GRID_POINTS: usize = 4;

/// Outcome of comparing an extrapolated coefficient with theory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No theoretical coefficient exists (Bayes Types II and III).
    NoTarget,
    /// The extrapolation's standard error exceeds half the theory value.
    InsufficientPrecision,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NoTarget => "no_target",
            Verdict::InsufficientPrecision => "insufficient_precision",
        }
    }
}

/// Weighted least-squares fit of `y = c + b / n`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Extrapolation {
    pub coefficient: f64,
    pub stderr: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// `Σ w (y − fit)²`; about `points − 2` when the model and errors are right.
    pub chi2: f64,
}

/// Fits `y_j = c + b / n_j` with weights `1 / se_j²`.
pub fn fit_extrapolation(ns: &[usize], ys: &[f64], ses: &[f64]) -> Result<Extrapolation> {
    if ns.len() != ys.len() || ns.len() != ses.len() || ns.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "need matching n, value and stderr arrays with at least 2 points (got {}, {}, {})",
            ns.len(),
            ys.len(),
            ses.len()
        )));
    }
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&n, &y), &se) in ns.iter().zip(ys).zip(ses) {
        if !(se > 0.0 && se.is_finite() && y.is_finite()) {
            return Err(Error::InvalidGrid(format!("point n = {n}: value {y}, stderr {se}")));
        }
        let w = 1.0 / (se * se);
        let u = 1.0 / n as f64;
        s0 += w;
        s1 += w * u;
        s2 += w * u * u;
        t0 += w * y;
        t1 += w * u * y;
    }
    let det = s0 * s2 - s1 * s1;
    if !(det > 0.0) {
        return Err(Error::InvalidGrid("sample sizes must be distinct".into()));
    }
    let c = (s2 * t0 - s1 * t1) / det;
    let b = (s0 * t1 - s1 * t0) / det;
    let chi2 = ns
        .iter()
        .zip(ys)
        .zip(ses)
        .map(|((&n, &y), &se)| {
            let r = (y - c - b / n as f64) / se;
            r * r
        })
        .sum();
    Ok(Extrapolation {
        coefficient: c,
        stderr: (s2 / det).sqrt(),
        slope: b,
        slope_stderr: (s0 / det).sqrt(),
        chi2,
    })
}

/// Pass iff `|c − theory| ≤ max(5% |theory|, 3 stderr)`.
pub fn judge(coefficient: f64, stderr: f64, theory: Option<f64>) -> Verdict {
    let Some(t) = theory else {
        return Verdict::NoTarget;
    };
    if stderr > 0.5 * t.abs() {
        return Verdict::InsufficientPrecision;
    }
    if (coefficient - t).abs() <= (RELATIVE_BAND * t.abs()).max(3.0 * stderr) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// The dominant-order coefficient a study is compared with, if one exists.
pub fn theory_coefficient(exp: &Experiment, job: &Job) -> Result<Option<f64>> {
    let report = coefficient_report(exp.model(), exp.w_star(), job.alpha)?;
    use Functional as F;
    Ok(match (job.functional, job.method) {
        (F::TypeI | F::TypeII | F::TypeIII | F::TypeIIp | F::TypeIIIp, Method::Ml) => Some(report.ml_type1),
        (F::TypeI, Method::Bayes) => Some(report.bayes_type1),
        (F::TypeIIp, Method::Bayes) => Some(report.bayes_type2p),
        (F::TypeIIIp, Method::Bayes) => Some(report.bayes_type3p),
        (F::TypeII | F::TypeIII, Method::Bayes) => None,
        (F::Generalization, _) => Some(report.prediction),
        (F::TrainingError | F::TrainingErrorComplete, _) => Some(-report.prediction),
    })
}

/// Estimates over a grid of sample sizes, extrapolated to `n → ∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSeries {
    pub functional: Functional,
    pub method: Method,
    pub alpha: f64,
    pub seed: u64,
    pub n_grid: Vec<usize>,
    pub estimates: Vec<ErrorEstimate>,
    /// Per-replication values at each `n` (`None` for failures).
    pub values: Vec<Vec<Option<f64>>>,
    /// Refinement checks of the Bayes grid, one per `n`.
    pub refinement: Vec<RefinementReport>,
    pub theory: Option<f64>,
    pub extrapolation: Extrapolation,
    pub verdict: Verdict,
}

impl ConvergenceSeries {
    pub fn extrapolated(&self) -> f64 {
        self.extrapolation.coefficient
    }

    pub fn extrapolation_stderr(&self) -> f64 {
        self.extrapolation.stderr
    }
}

/// Rejects sample-size grids a study cannot extrapolate from.
pub fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.len() < MIN_GRID_POINTS {
        return Err(Error::InvalidGrid(format!(
            "need at least {MIN_GRID_POINTS} sample sizes, got {}",
            n_grid.len()
        )));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!("sample sizes must be positive and strictly increasing: {n_grid:?}")));
    }
    Ok(())
}

/// Refinement check on the data of replication 0 at `n`.
fn refinement_at(exp: &Experiment, n: usize, seed: u64) -> Result<RefinementReport> {
    let data = sample_joint(exp.model(), exp.w_star(), n, &mut replication_rng(seed, n, 0))?;
    let report = evidence_refinement(exp.grid()?, &data.xs)?;
    if !report.ok() {
        return Err(Error::GridRefinement { n, report });
    }
    Ok(report)
}

/// Runs `job` at every `n` of the grid, with the Bayes refinement check.
pub fn run_grid(
    exp: &Experiment,
    runner: &Runner,
    job: &Job,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<(Vec<Run>, Vec<RefinementReport>)> {
    let (mut runs, refinement) = run_grid_jobs(exp, runner, std::slice::from_ref(job), n_grid, replications, seed)?;
    Ok((runs.pop().expect("one series per job"), refinement))
}

/// [`run_grid`] for several jobs on shared draws; returns one run per `n`
/// for each job, in job order.
pub fn run_grid_jobs(
    exp: &Experiment,
    runner: &Runner,
    jobs: &[Job],
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<(Vec<Vec<Run>>, Vec<RefinementReport>)> {
    let mut runs: Vec<Vec<Run>> = jobs.iter().map(|_| Vec::with_capacity(n_grid.len())).collect();
    let mut refinement = Vec::new();
    let bayes = jobs.iter().any(|j| j.method == Method::Bayes);
    for &n in n_grid {
        if bayes && exp.refinement_check {
            refinement.push(refinement_at(exp, n, seed)?);
        }
        for (series, run) in runs.iter_mut().zip(estimate_jobs(exp, runner, jobs, n, replications, seed)?) {
            series.push(run);
        }
    }
    Ok((runs, refinement))
}

/// Assembles a series from completed runs (all for the same job and seed).
pub fn series_from_runs(
    job: &Job,
    runs: Vec<Run>,
    refinement: Vec<RefinementReport>,
    theory: Option<f64>,
) -> Result<ConvergenceSeries> {
    let n_grid: Vec<usize> = runs.iter().map(|r| r.estimate.n).collect();
    check_grid(&n_grid)?;
    let (ys, ses): (Vec<f64>, Vec<f64>) = runs.iter().map(|r| r.estimate.scaled()).unzip();
    let extrapolation = fit_extrapolation(&n_grid, &ys, &ses)?;
    let verdict = judge(extrapolation.coefficient, extrapolation.stderr, theory);
    let seed = runs[0].estimate.seed;
    let (estimates, values) = runs.into_iter().map(|r| (r.estimate, r.values)).unzip();
    Ok(ConvergenceSeries {
        functional: job.functional,
        method: job.method,
        alpha: job.alpha,
        seed,
        n_grid,
        estimates,
        values,
        refinement,
        theory,
        extrapolation,
        verdict,
    })
}

fn study_series(
    exp: &Experiment,
    runner: &Runner,
    job: &Job,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ConvergenceSeries> {
    check_grid(n_grid)?;
    let theory = theory_coefficient(exp, job)?;
    let (runs, refinement) = run_grid(exp, runner, job, n_grid, replications, seed)?;
    series_from_runs(job, runs, refinement, theory)
}

/// Fits `n · D̂(n) = c + b / n` over `n_grid` and compares `c` with theory.
/// An extrapolation too imprecise to judge is an error carrying the series.
pub fn convergence_study(
    exp: &Experiment,
    runner: &Runner,
    job: &Job,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<ConvergenceSeries> {
    let series = study_series(exp, runner, job, n_grid, replications, seed)?;
    if series.verdict == Verdict::InsufficientPrecision {
        return Err(Error::InsufficientPrecision {
            stderr: series.extrapolation.stderr,
            theory: series.theory.unwrap_or(f64::NAN),
            series: Box::new(series),
        });
    }
    Ok(series)
}

/// Fraction of bootstrap resamples whose mean is positive.
pub fn bootstrap_confidence(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.is_empty() || resamples == 0 {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = values.len();
    let mut positive = 0usize;
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..k {
            sum += values[rng.random_range(0..k)];
        }
        if sum > 0.0 {
            positive += 1;
        }
    }
    positive as f64 / resamples as f64
}

/// `D̂_a(n_a) − D̂_b(n_b)` at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceRow {
    pub n: usize,
    pub minuend: ErrorEstimate,
    pub subtrahend: ErrorEstimate,
    pub difference: f64,
    pub stderr: f64,
    /// Bootstrap confidence that the difference is positive (paired rows only).
    pub confidence: Option<f64>,
}

impl DifferenceRow {
    pub fn scaled(&self) -> (f64, f64) {
        let n = self.n as f64;
        (n * self.difference, n * self.stderr)
    }
}

/// A difference of two error series, extrapolated like a convergence series.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceSeries {
    pub name: &'static str,
    pub rows: Vec<DifferenceRow>,
    pub theory: Option<f64>,
    pub extrapolation: Extrapolation,
    pub verdict: Verdict,
}

fn difference_series(name: &'static str, rows: Vec<DifferenceRow>, theory: Option<f64>) -> Result<DifferenceSeries> {
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let (ys, ses): (Vec<f64>, Vec<f64>) = rows.iter().map(DifferenceRow::scaled).unzip();
    let extrapolation = fit_extrapolation(&ns, &ys, &ses)?;
    let verdict = judge(extrapolation.coefficient, extrapolation.stderr, theory);
    Ok(DifferenceSeries {
        name,
        rows,
        theory,
        extrapolation,
        verdict,
    })
}

/// Paired per-replication difference of two runs on the same seed and `n`.
pub fn paired_difference(a: &Run, b: &Run, bootstrap_seed: u64) -> Result<DifferenceRow> {
    if a.estimate.n != b.estimate.n || a.estimate.seed != b.estimate.seed || a.values.len() != b.values.len() {
        return Err(Error::InvalidGrid("paired runs need the same n, seed and replication count".into()));
    }
    let diffs: Vec<Option<f64>> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| Some((*x)? - (*y)?))
        .collect();
    let (difference, stderr, _) = super::mean_stderr(&diffs);
    let flat: Vec<f64> = diffs.into_iter().flatten().collect();
    Ok(DifferenceRow {
        n: a.estimate.n,
        minuend: a.estimate.clone(),
        subtrahend: b.estimate.clone(),
        difference,
        stderr,
        confidence: Some(bootstrap_confidence(&flat, BOOTSTRAP_RESAMPLES, bootstrap_seed ^ a.estimate.n as u64)),
    })
}

/// ML minus Bayes Type I on shared seeds, against `Σ(λ − 1 − ln λ)/2`.
pub fn gap_series(exp: &Experiment, ml: &[Run], bayes: &[Run]) -> Result<DifferenceSeries> {
    if ml.len() != bayes.len() {
        return Err(Error::InvalidGrid("ML and Bayes grids differ".into()));
    }
    let report = coefficient_report(exp.model(), exp.w_star(), 1.0)?;
    let rows = ml
        .iter()
        .zip(bayes)
        .map(|(a, b)| paired_difference(a, b, a.estimate.seed))
        .collect::<Result<Vec<_>>>()?;
    difference_series("ml_minus_bayes", rows, Some(report.gap))
}

/// `D̂(αn) − D̂_{Y_1|X^n}(n)` (independent runs), against `ln det[I_XY K⁻¹]/(2α)`.
pub fn supplementary_series(
    exp: &Experiment,
    alpha: f64,
    type1_at_alpha_n: &[Run],
    type2p: &[Run],
) -> Result<DifferenceSeries> {
    if type1_at_alpha_n.len() != type2p.len() {
        return Err(Error::InvalidGrid("Type I and Type II' grids differ".into()));
    }
    let report = coefficient_report(exp.model(), exp.w_star(), alpha)?;
    let rows = type1_at_alpha_n
        .iter()
        .zip(type2p)
        .map(|(a, b)| {
            let n = b.estimate.n;
            if a.estimate.n != alpha_sites(alpha, n)? {
                return Err(Error::InvalidGrid(format!(
                    "Type I run at n = {} does not match α n for n = {n}",
                    a.estimate.n
                )));
            }
            Ok(DifferenceRow {
                n,
                minuend: a.estimate.clone(),
                subtrahend: b.estimate.clone(),
                difference: a.estimate.mean - b.estimate.mean,
                stderr: a.estimate.stderr.hypot(b.estimate.stderr),
                confidence: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    difference_series("supplementary_gain", rows, report.supplementary_gain)
}

/// Side-by-side ML and Bayes Type I studies on shared seeds, with the gap and
/// (when `alpha` is given) the supplementary-data gain.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub ml: ConvergenceSeries,
    pub bayes: ConvergenceSeries,
    pub gap: DifferenceSeries,
    pub supplementary: Option<DifferenceSeries>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        let ok = |v: Verdict| matches!(v, Verdict::Pass | Verdict::NoTarget);
        ok(self.ml.verdict)
            && ok(self.bayes.verdict)
            && ok(self.gap.verdict)
            && self.supplementary.as_ref().is_none_or(|s| ok(s.verdict))
    }
}

pub fn compare(
    exp: &Experiment,
    runner: &Runner,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
    alpha: Option<f64>,
) -> Result<Comparison> {
    check_grid(n_grid)?;
    if let Some(alpha) = alpha {
        for &n in n_grid {
            alpha_sites(alpha, n)?;
        }
    }
    let ml_job = Job::new(Functional::TypeI, Method::Ml);
    let bayes_job = Job::new(Functional::TypeI, Method::Bayes);
    let (ml_runs, _) = run_grid(exp, runner, &ml_job, n_grid, replications, seed)?;
    let (bayes_runs, refinement) = run_grid(exp, runner, &bayes_job, n_grid, replications, seed)?;
    let gap = gap_series(exp, &ml_runs, &bayes_runs)?;
    let supplementary = match alpha {
        None => None,
        Some(alpha) => {
            let alpha_grid: Vec<usize> = n_grid.iter().map(|&n| alpha_sites(alpha, n)).collect::<std::result::Result<_, _>>()?;
            let (t1, _) = run_grid(exp, runner, &bayes_job, &alpha_grid, replications, seed)?;
            let job = Job::with_alpha(Functional::TypeIIp, Method::Bayes, alpha);
            let (t2p, _) = run_grid(exp, runner, &job, n_grid, replications, seed)?;
            Some(supplementary_series(exp, alpha, &t1, &t2p)?)
        }
    };
    let ml_theory = theory_coefficient(exp, &ml_job)?;
    let bayes_theory = theory_coefficient(exp, &bayes_job)?;
    Ok(Comparison {
        ml: series_from_runs(&ml_job, ml_runs, Vec::new(), ml_theory)?,
        bayes: series_from_runs(&bayes_job, bayes_runs, refinement, bayes_theory)?,
        gap,
        supplementary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wls_recovers_exact_model() {
        let ns = [50, 100, 200, 400];
        let ys: Vec<f64> = ns.iter().map(|&n| 2.0 + 30.0 / n as f64).collect();
        let fit = fit_extrapolation(&ns, &ys, &[0.1, 0.2, 0.1, 0.3]).unwrap();
        assert!((fit.coefficient - 2.0).abs() < 1e-12);
        assert!((fit.slope - 30.0).abs() < 1e-9);
        assert!(fit.chi2 < 1e-20);
    }

    #[test]
    fn wls_stderr_matches_two_point_formula() {
        // Two points determine the line exactly; var(c) follows from
        // c = (n2 y2 − n1 y1) / (n2 − n1) with independent errors.
        let (n1, n2) = (100usize, 400usize);
        let (s1, s2) = (0.3, 0.5);
        let fit = fit_extrapolation(&[n1, n2], &[1.0, 1.0], &[s1, s2]).unwrap();
        let d = (n2 - n1) as f64;
        let expect = ((n1 as f64 * s1 / d).powi(2) + (n2 as f64 * s2 / d).powi(2)).sqrt();
        assert!((fit.stderr - expect).abs() < 1e-12);
    }

    #[test]
    fn verdict_band() {
        assert_eq!(judge(1.04, 0.001, Some(1.0)), Verdict::Pass);
        assert_eq!(judge(1.06, 0.001, Some(1.0)), Verdict::Fail);
        assert_eq!(judge(1.2, 0.1, Some(1.0)), Verdict::Pass);
        assert_eq!(judge(1.0, 0.6, Some(1.0)), Verdict::InsufficientPrecision);
        assert_eq!(judge(1.0, 0.1, None), Verdict::NoTarget);
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[1, 2, 3]).is_err());
        assert!(check_grid(&[1, 2, 2, 3]).is_err());
        assert!(check_grid(&[0, 2, 3, 4]).is_err());
        assert!(check_grid(&[1, 2, 3, 4]).is_ok());
        assert!(fit_extrapolation(&[1, 2], &[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let v = [0.5, -0.1, 0.3, 0.2, 0.4];
        let a = bootstrap_confidence(&v, 500, 3);
        assert_eq!(a, bootstrap_confidence(&v, 500, 3));
        assert!(a > 0.9);
        assert_eq!(bootstrap_confidence(&[-1.0, -2.0], 100, 1), 0.0);
    }
}
