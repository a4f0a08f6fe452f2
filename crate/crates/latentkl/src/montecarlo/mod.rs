//! Monte Carlo estimation of the error functionals and convergence studies.
//!
//! Every replication draws its data from its own random stream, derived from
//! `(seed, n, replication)`. Results therefore do not depend on the number of
//! threads or on scheduling, and the ML and Bayes estimators run on the same
//! seed see identical data.

mod functionals;
mod study;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use latentkl_core::estimators::{ParamGrid, Prior, DEFAULT_NODES};
use latentkl_core::model::{validate_identifiability, ModelSpec, ParamVec, REF_B_TRUE, REF_C_TRUE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use functionals::{exact_type1_inner, replicate, replicate_jobs};
pub use study::{
    bootstrap_confidence, check_grid, compare, convergence_study, fit_extrapolation, gap_series, judge, paired_difference,
    run_grid, run_grid_jobs, series_from_runs, supplementary_series, theory_coefficient, Comparison, ConvergenceSeries,
    DifferenceRow, DifferenceSeries, Extrapolation, Verdict, BOOTSTRAP_RESAMPLES, MIN_GRID_POINTS,
    RELATIVE_BAND,
};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Replications needed for a standard error.
pub const MIN_REPLICATIONS: usize = 2;

/// The error functionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Functional {
    /// All labels jointly.
    #[serde(rename = "type1")]
    TypeI,
    /// One in-sample label at a time.
    #[serde(rename = "type2")]
    TypeII,
    /// The label of a future observation.
    #[serde(rename = "type3")]
    TypeIII,
    /// The first `α n` in-sample labels jointly.
    #[serde(rename = "type2p")]
    TypeIIp,
    /// `α n` future labels jointly.
    #[serde(rename = "type3p")]
    TypeIIIp,
    /// KL from `q(x)` to the predictive density.
    #[serde(rename = "generalization")]
    Generalization,
    /// `(ln q(X^n) − ln p(X^n | ŵ_X)) / n` (ML only).
    #[serde(rename = "training")]
    TrainingError,
    /// `(ln q(X^n, Y^n) − ln p(X^n, Y^n | ŵ_XY)) / n` (ML only).
    #[serde(rename = "training_complete")]
    TrainingErrorComplete,
}

impl Functional {
    pub const ALL: [Functional; 8] = [
        Functional::TypeI,
        Functional::TypeII,
        Functional::TypeIII,
        Functional::TypeIIp,
        Functional::TypeIIIp,
        Functional::Generalization,
        Functional::TrainingError,
        Functional::TrainingErrorComplete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Functional::TypeI => "type1",
            Functional::TypeII => "type2",
            Functional::TypeIII => "type3",
            Functional::TypeIIp => "type2p",
            Functional::TypeIIIp => "type3p",
            Functional::Generalization => "generalization",
            Functional::TrainingError => "training",
            Functional::TrainingErrorComplete => "training_complete",
        }
    }

    /// Whether the functional targets `α n` labels.
    pub fn uses_alpha(self) -> bool {
        matches!(self, Functional::TypeIIp | Functional::TypeIIIp)
    }

    /// Whether the functional is a Kullback-Leibler divergence (and so nonnegative).
    pub fn is_divergence(self) -> bool {
        !matches!(self, Functional::TrainingError | Functional::TrainingErrorComplete)
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Functional {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Functional::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Functional::ALL.iter().map(|f| f.name()).collect();
                format!("unknown functional `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Estimation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ml,
    Bayes,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::Bayes => "bayes",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ml" => Ok(Method::Ml),
            "bayes" => Ok(Method::Bayes),
            _ => Err(format!("unknown method `{s}` (expected ml or bayes)")),
        }
    }
}

/// What to estimate: functional, method and target fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Job {
    pub functional: Functional,
    pub method: Method,
    /// Fraction `α` of labels for Types II'/III'; 1 elsewhere.
    pub alpha: f64,
}

impl Job {
    pub fn new(functional: Functional, method: Method) -> Self {
        Self {
            functional,
            method,
            alpha: 1.0,
        }
    }

    pub fn with_alpha(functional: Functional, method: Method, alpha: f64) -> Self {
        Self {
            functional,
            method,
            alpha: if functional.uses_alpha() { alpha } else { 1.0 },
        }
    }
}

/// True model, prior and quadrature resolution shared by all replications.
#[derive(Debug)]
pub struct Experiment {
    model: ModelSpec,
    w_star: ParamVec,
    prior: Prior,
    nodes_per_axis: usize,
    /// Use the exact per-site inner sum for factorized (ML) estimators.
    pub rao_blackwell: bool,
    /// Run the 2× grid refinement check before each Bayes run.
    pub refinement_check: bool,
    grid: OnceLock<std::result::Result<ParamGrid, latentkl_core::Error>>,
}

impl Experiment {
    pub fn new(model: ModelSpec, w_star: ParamVec, prior: Prior, nodes_per_axis: usize) -> Result<Self> {
        let report = validate_identifiability(&model, &w_star);
        if !report.ok {
            return Err(Error::Invalid(format!(
                "true parameter {:?} is not identifiable: {report:?}",
                w_star.values()
            )));
        }
        prior.check_support(&w_star)?;
        Ok(Self {
            model,
            w_star,
            prior,
            nodes_per_axis,
            rao_blackwell: true,
            refinement_check: true,
            grid: OnceLock::new(),
        })
    }

    /// Binomial mixture, three trials, `w* = (0.5, 0.8, 0.25)`, label-aligned
    /// uniform prior, 64 nodes per axis.
    pub fn ref_b() -> Result<Self> {
        let m = ModelSpec::ref_b();
        let w = ParamVec::new(&m, REF_B_TRUE)?;
        Self::new(m, w, Prior::aligned(&m, 1.0, &w)?, DEFAULT_NODES)
    }

    /// Unit-variance Gaussian mixture at `w* = (0.4, −1, 1.5)`.
    pub fn ref_c() -> Result<Self> {
        let m = ModelSpec::ref_c();
        let w = ParamVec::new(&m, REF_C_TRUE)?;
        Self::new(m, w, Prior::aligned(&m, 1.0, &w)?, DEFAULT_NODES)
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn w_star(&self) -> &ParamVec {
        &self.w_star
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    /// The parameter grid, built on first use.
    pub fn grid(&self) -> std::result::Result<&ParamGrid, latentkl_core::Error> {
        self.grid
            .get_or_init(|| ParamGrid::new(&self.model, &self.prior, self.nodes_per_axis))
            .as_ref()
            .map_err(Clone::clone)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream of replication `r` at sample size `n`.
pub fn replication_rng(seed: u64, n: usize, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(n as u64)));
    rng.set_stream(r as u64);
    rng
}

/// Ordered parallel map over replication indices.
#[derive(Default)]
pub struct Runner {
    pool: Option<rayon::ThreadPool>,
}

impl Runner {
    /// `threads = 0` uses rayon's global pool.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = match threads {
            0 => None,
            t => Some(rayon::ThreadPoolBuilder::new().num_threads(t).build()?),
        };
        Ok(Self { pool })
    }

    pub fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let run = || (0..count).into_par_iter().map(&f).collect();
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }
}

/// Summary of one Monte Carlo run.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorEstimate {
    pub functional: Functional,
    pub method: Method,
    pub n: usize,
    pub alpha: f64,
    pub mean: f64,
    /// Sample standard deviation over `√replications`.
    pub stderr: f64,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
    pub seed: u64,
}

impl ErrorEstimate {
    /// `n · mean` and its standard error.
    pub fn scaled(&self) -> (f64, f64) {
        let n = self.n as f64;
        (n * self.mean, n * self.stderr)
    }
}

/// An estimate with its per-replication values (`None` for failures).
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub estimate: ErrorEstimate,
    pub values: Vec<Option<f64>>,
}

/// Mean and standard error of the successful values, folded in index order.
pub fn mean_stderr(values: &[Option<f64>]) -> (f64, f64, usize) {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let k = ok.len();
    if k == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = ok.iter().fold(0.0, |acc, v| acc + v) / k as f64;
    if k < 2 {
        return (mean, f64::NAN, k);
    }
    let ss = ok.iter().fold(0.0, |acc, v| acc + (v - mean) * (v - mean));
    (mean, (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt(), k)
}

/// Runs `replications` independent replications of `job` at sample size `n`.
pub fn estimate(
    exp: &Experiment,
    runner: &Runner,
    job: &Job,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Run> {
    let mut runs = estimate_jobs(exp, runner, std::slice::from_ref(job), n, replications, seed)?;
    Ok(runs.pop().expect("one run per job"))
}

/// [`estimate`] for several jobs on shared draws: replication `r` of every job
/// sees the same `(X^n, Y^n)`, and each run is identical to the one
/// [`estimate`] returns for that job alone.
pub fn estimate_jobs(
    exp: &Experiment,
    runner: &Runner,
    jobs: &[Job],
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<Vec<Run>> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::TooFewReplications {
            minimum: MIN_REPLICATIONS,
            found: replications,
        });
    }
    if n == 0 {
        return Err(latentkl_core::Error::EmptyData.into());
    }
    for job in jobs {
        functionals::check_job(exp, job, n)?;
    }
    let mut results = runner.map(replications, |r| {
        let mut rng = replication_rng(seed, n, r);
        replicate_jobs(exp, jobs, n, &mut rng)
    });
    let mut runs = Vec::with_capacity(jobs.len());
    for (j, job) in jobs.iter().enumerate() {
        let column: Vec<_> = results.iter_mut().map(|row| std::mem::replace(&mut row[j], Ok(0.0))).collect();
        runs.push(assemble(job, n, seed, column)?);
    }
    Ok(runs)
}

fn assemble(
    job: &Job,
    n: usize,
    seed: u64,
    results: Vec<std::result::Result<f64, latentkl_core::Error>>,
) -> Result<Run> {
    let replications = results.len();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > MAX_FAILURE_RATE * replications as f64 {
        let first = results.into_iter().find_map(|r| r.err()).expect("a failure was counted");
        return Err(Error::TooManyFailures {
            failed,
            replications,
            first,
        });
    }
    let values: Vec<Option<f64>> = results.into_iter().map(|r| r.ok()).collect();
    let (mean, stderr, ok) = mean_stderr(&values);
    Ok(Run {
        estimate: ErrorEstimate {
            functional: job.functional,
            method: job.method,
            n,
            alpha: job.alpha,
            mean,
            stderr,
            replications: ok,
            failures: failed,
            seed,
        },
        values,
    })
}

macro_rules! estimator {
    ($(#[$doc:meta])* $name:ident, $functional:expr) => {
        $(#[$doc])*
        pub fn $name(
            exp: &Experiment,
            runner: &Runner,
            method: Method,
            n: usize,
            replications: usize,
            seed: u64,
        ) -> Result<ErrorEstimate> {
            Ok(estimate(exp, runner, &Job::new($functional, method), n, replications, seed)?.estimate)
        }
    };
}

estimator!(
    /// `D(n)`: KL between `q(Y^n | X^n)` and the estimate, per label.
    estimate_type1,
    Functional::TypeI
);
estimator!(
    /// `D_{y|X^n}(n)`: per-site KL to the in-sample label marginal.
    estimate_type2,
    Functional::TypeII
);
estimator!(
    /// `D_{y|x}(n)`: KL for the label of a fresh observation.
    estimate_type3,
    Functional::TypeIII
);
estimator!(
    /// `D_x(n)`: KL between `q(x)` and the predictive density.
    estimate_generalization,
    Functional::Generalization
);

/// `D_{Y_1|X^n}(n)`, the first `α n` labels jointly.
pub fn estimate_type2p(
    exp: &Experiment,
    runner: &Runner,
    method: Method,
    n: usize,
    alpha: f64,
    replications: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    let job = Job::with_alpha(Functional::TypeIIp, method, alpha);
    Ok(estimate(exp, runner, &job, n, replications, seed)?.estimate)
}

/// `D_{Y_2|X_2}(n)`, `α n` future labels jointly.
pub fn estimate_type3p(
    exp: &Experiment,
    runner: &Runner,
    method: Method,
    n: usize,
    alpha: f64,
    replications: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    let job = Job::with_alpha(Functional::TypeIIIp, method, alpha);
    Ok(estimate(exp, runner, &job, n, replications, seed)?.estimate)
}

/// ML training error `(ln q(X^n) − ln p(X^n | ŵ_X)) / n`.
pub fn training_error_check(
    exp: &Experiment,
    runner: &Runner,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    let job = Job::new(Functional::TrainingError, Method::Ml);
    Ok(estimate(exp, runner, &job, n, replications, seed)?.estimate)
}
