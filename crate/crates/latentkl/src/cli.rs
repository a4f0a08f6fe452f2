//! The `latentkl` command.
//!
//! Exit status: 0 when the command succeeds (and any study passes or has no
//! target), 2 when a study fails or cannot complete, 1 on a usage or
//! configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentkl_core::fisher::build_fisher_set;
use latentkl_core::model::validate_identifiability;
use latentkl_core::theory::coefficient_report;

use crate::config::{read_text, ExperimentConfig, OutputFile};
use crate::error::{Error, Result};
use crate::io::{
    compare_records, comparison_series, create_dir, difference_plot_records, fisher_blocks, plot_records,
    replication_records, run_records, write_blocks, write_csv, write_identifiability, CoeffsRecord, SeriesRecord,
    SummaryRecord, Written,
};
use crate::montecarlo::{check_grid, compare, convergence_study, estimate, ConvergenceSeries, Functional, Method, Runner, Verdict};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FAIL: u8 = 2;

/// `α` for `coeffs` when neither the flag nor the config gives one.
pub const DEFAULT_COEFF_ALPHA: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(
    name = "latentkl",
    version,
    about = "Latent-variable estimation error of ML and Bayes methods: exact coefficients and Monte Carlo studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment config; without one, the reference binomial mixture
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed (overrides study.seed)
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for replications (0 = one per core)
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    threads: usize,

    /// Output directory for CSV files (overrides output.directory)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Identifiability diagnostics of the true parameter
    Validate,
    /// The Fisher information matrices at the true parameter
    Fisher,
    /// Every dominant-order coefficient at the true parameter
    Coeffs {
        /// Fraction of labels for the primed types [default: study.alpha, else 0.5]
        #[arg(long, value_name = "A")]
        alpha: Option<f64>,
    },
    /// One Monte Carlo estimate at a single sample size
    Simulate {
        #[command(flatten)]
        study: StudyArgs,
        /// Sample size
        #[arg(long, value_name = "N")]
        n: usize,
    },
    /// Convergence study over the sample-size grid, judged against theory
    Study {
        #[command(flatten)]
        study: StudyArgs,
        /// Comma-separated sample sizes (overrides study.n_grid)
        #[arg(long, value_name = "N,..", value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
    /// ML and Bayes Type I studies side by side, with the gap rows and, given
    /// alpha, the supplementary-data gain
    Compare {
        /// Fraction of labels for the supplementary-data rows
        #[arg(long, value_name = "A")]
        alpha: Option<f64>,
        /// Replications per sample size (overrides study.replications)
        #[arg(long, value_name = "R")]
        replications: Option<usize>,
        /// Comma-separated sample sizes (overrides study.n_grid)
        #[arg(long, value_name = "N,..", value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Error functional: type1, type2, type3, type2p, type3p, generalization, training, training_complete
    #[arg(long, value_name = "NAME")]
    functional: Option<Functional>,
    /// Estimation method: ml or bayes
    #[arg(long, value_name = "NAME")]
    method: Option<Method>,
    /// Fraction of labels for type2p / type3p
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Replications per sample size (overrides study.replications)
    #[arg(long, value_name = "R")]
    replications: Option<usize>,
}

/// Runs the command line `args` (including the program name).
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            let _ = writeln!(stderr, "error: {error}");
            code
        }
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let code = run(std::env::args_os(), &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    ExitCode::from(code)
}

struct Failure {
    code: u8,
    error: Error,
}

trait Stage<T> {
    fn usage(self) -> std::result::Result<T, Failure>;
    fn failed(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<Error>> Stage<T> for std::result::Result<T, E> {
    fn usage(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }

    fn failed(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_FAIL,
            error: e.into(),
        })
    }
}

/// The config as read, with the source text for locating errors.
struct Source {
    path: PathBuf,
    text: String,
    config: ExperimentConfig,
}

fn load(cli: &Cli) -> Result<Source> {
    let (path, text) = match &cli.config {
        Some(path) => (path.clone(), read_text(path)?),
        None => (PathBuf::from("<default>"), "{}".to_string()),
    };
    let mut config = ExperimentConfig::parse_schema(&path, &text)?;
    if let Some(seed) = cli.seed {
        config.study.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.directory = Some(out.clone());
    }
    Ok(Source { path, text, config })
}

impl Source {
    fn apply(&mut self, s: &StudyArgs) {
        let study = &mut self.config.study;
        if let Some(f) = s.functional {
            study.functional = f;
        }
        if let Some(m) = s.method {
            study.method = m;
        }
        if s.alpha.is_some() {
            study.alpha = s.alpha;
        }
        if let Some(r) = s.replications {
            study.replications = r;
        }
    }

    fn check(&self) -> Result<()> {
        self.config.check_in(&self.path, &self.text)
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> std::result::Result<u8, Failure> {
    let mut src = load(&cli).usage()?;
    match &cli.command {
        Command::Validate => return validate(&src, stdout),
        Command::Simulate { study, n } => {
            src.apply(study);
            src.config.study.n_grid = vec![*n];
        }
        Command::Study { study, n_grid } => {
            src.apply(study);
            if let Some(g) = n_grid {
                src.config.study.n_grid = g.clone();
            }
        }
        Command::Compare {
            alpha,
            replications,
            n_grid,
        } => {
            let study = &mut src.config.study;
            study.functional = Functional::TypeI;
            if alpha.is_some() {
                study.alpha = *alpha;
            }
            if let Some(r) = replications {
                study.replications = *r;
            }
            if let Some(g) = n_grid {
                study.n_grid = g.clone();
            }
        }
        Command::Fisher | Command::Coeffs { .. } => {}
    }
    src.check().usage()?;
    if matches!(cli.command, Command::Study { .. } | Command::Compare { .. }) {
        check_grid(&src.config.study.n_grid).usage()?;
    }
    let config = &src.config;
    let exp = config.experiment().usage()?;
    match cli.command {
        Command::Validate => unreachable!("handled above"),
        Command::Fisher => {
            let f = build_fisher_set(exp.model(), exp.w_star()).failed()?;
            write_blocks(&mut *stdout, &fisher_blocks(&f)).failed()?;
            Ok(EXIT_PASS)
        }
        Command::Coeffs { alpha } => {
            let alpha = alpha.or(config.study.alpha).unwrap_or(DEFAULT_COEFF_ALPHA);
            let r = coefficient_report(exp.model(), exp.w_star(), alpha).usage()?;
            write_csv(&mut *stdout, &[CoeffsRecord::new(exp.model(), exp.w_star(), &r)]).failed()?;
            Ok(EXIT_PASS)
        }
        Command::Simulate { n, .. } => {
            let runner = Runner::new(cli.threads).usage()?;
            let s = &config.study;
            let run = estimate(&exp, &runner, &config.job(), n, s.replications, s.seed).failed()?;
            let summary = [SummaryRecord::from(&run.estimate)];
            write_csv(&mut *stdout, &summary).failed()?;
            if let Some(dir) = &config.output.directory {
                let mut w = start_output(dir, config).failed()?;
                if config.output.wants(OutputFile::Summary) {
                    w.file(dir, "summary.csv", &summary).failed()?;
                }
                if config.output.wants(OutputFile::Replications) {
                    let reps = replication_records(&run.estimate, &run.values);
                    w.file(dir, "replications.csv", &reps).failed()?;
                }
                report_files(stderr, &w);
            }
            Ok(EXIT_PASS)
        }
        Command::Study { .. } => {
            let runner = Runner::new(cli.threads).usage()?;
            let s = &config.study;
            let series = match convergence_study(&exp, &runner, &config.job(), &s.n_grid, s.replications, s.seed) {
                Ok(series) => series,
                Err(Error::InsufficientPrecision { series, .. }) => *series,
                Err(e) => return Err(e).failed(),
            };
            emit_study(config, &series, stdout, stderr).failed()?;
            let _ = writeln!(
                stderr,
                "{}: extrapolated {:.6} ± {:.6}, theory {}, verdict {}",
                crate::io::series_name(&series),
                series.extrapolated(),
                series.extrapolation_stderr(),
                series.theory.map_or("none".to_string(), |t| format!("{t:.6}")),
                series.verdict.name()
            );
            Ok(match series.verdict {
                Verdict::Pass | Verdict::NoTarget => EXIT_PASS,
                Verdict::Fail | Verdict::InsufficientPrecision => EXIT_FAIL,
            })
        }
        Command::Compare { .. } => {
            let runner = Runner::new(cli.threads).usage()?;
            let s = &config.study;
            let c = compare(&exp, &runner, &s.n_grid, s.replications, s.seed, s.alpha).failed()?;
            let series = comparison_series(&c, s.alpha);
            write_csv(&mut *stdout, &series).failed()?;
            if let Some(dir) = &config.output.directory {
                let mut w = start_output(dir, config).failed()?;
                let mut summary: Vec<SummaryRecord> =
                    c.ml.estimates.iter().chain(&c.bayes.estimates).map(SummaryRecord::from).collect();
                let mut diff_rows = compare_records(&c.gap);
                let mut plot = plot_records(&c.ml);
                plot.extend(plot_records(&c.bayes));
                plot.extend(difference_plot_records(&c.gap));
                if let Some(sup) = &c.supplementary {
                    summary.extend(sup.rows.iter().map(|r| SummaryRecord::from(&r.minuend)));
                    summary.extend(sup.rows.iter().map(|r| SummaryRecord::from(&r.subtrahend)));
                    diff_rows.extend(compare_records(sup));
                    plot.extend(difference_plot_records(sup));
                }
                if config.output.wants(OutputFile::Summary) {
                    w.file(dir, "summary.csv", &summary).failed()?;
                }
                if config.output.wants(OutputFile::Replications) {
                    let mut reps = Vec::new();
                    for s in [&c.ml, &c.bayes] {
                        for (e, v) in s.estimates.iter().zip(&s.values) {
                            reps.extend(replication_records(e, v));
                        }
                    }
                    w.file(dir, "replications.csv", &reps).failed()?;
                }
                if config.output.wants(OutputFile::Series) {
                    w.file(dir, "series.csv", &series).failed()?;
                    w.file(dir, "compare.csv", &diff_rows).failed()?;
                }
                if config.output.wants(OutputFile::Plot) {
                    w.file(dir, "plot.csv", &plot).failed()?;
                }
                report_files(stderr, &w);
            }
            for row in &series {
                let _ = writeln!(stderr, "{}: verdict {}", row.series, row.verdict);
            }
            Ok(if c.passed() { EXIT_PASS } else { EXIT_FAIL })
        }
    }
}

/// Prints the diagnostics; exits nonzero when the point is not identifiable
/// or the config violates another invariant.
fn validate(src: &Source, stdout: &mut dyn Write) -> std::result::Result<u8, Failure> {
    let m = src.config.model_spec().map_err(violation_failure(src))?;
    let w = src.config.true_param(&m).map_err(violation_failure(src))?;
    let report = validate_identifiability(&m, &w);
    write_identifiability(&mut *stdout, &report).failed()?;
    src.check().usage()?;
    Ok(EXIT_PASS)
}

fn violation_failure(src: &Source) -> impl Fn(crate::config::Violation) -> Failure + '_ {
    move |v| {
        let (line, column) = crate::config::key_position(&src.text, v.key);
        Failure {
            code: EXIT_USAGE,
            error: Error::Config {
                path: src.path.clone(),
                key: v.key.to_string(),
                line,
                column,
                message: v.message,
            },
        }
    }
}

/// Creates the directory and records the effective config next to the data,
/// so the run can be repeated exactly.
fn start_output(dir: &Path, config: &ExperimentConfig) -> Result<Written> {
    create_dir(dir)?;
    let mut w = Written::default();
    let mut recorded = config.clone();
    recorded.output.directory = None;
    w.text(dir, "config.json", &(recorded.to_json() + "\n"))?;
    Ok(w)
}

fn report_files(stderr: &mut dyn Write, w: &Written) {
    for f in &w.files {
        let _ = writeln!(stderr, "wrote {}", f.display());
    }
}

/// Writes the files of one convergence study and its series row to stdout.
pub fn emit_study(
    config: &ExperimentConfig,
    series: &ConvergenceSeries,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let row = [SeriesRecord::from(series)];
    write_csv(&mut *stdout, &row)?;
    if let Some(dir) = &config.output.directory {
        let mut w = start_output(dir, config)?;
        let runs: Vec<_> = series
            .estimates
            .iter()
            .zip(&series.values)
            .map(|(e, v)| crate::montecarlo::Run {
                estimate: e.clone(),
                values: v.clone(),
            })
            .collect();
        let (summary, reps) = run_records(&runs);
        if config.output.wants(OutputFile::Summary) {
            w.file(dir, "summary.csv", &summary)?;
        }
        if config.output.wants(OutputFile::Replications) {
            w.file(dir, "replications.csv", &reps)?;
        }
        if config.output.wants(OutputFile::Series) {
            w.file(dir, "series.csv", &row)?;
        }
        if config.output.wants(OutputFile::Plot) {
            w.file(dir, "plot.csv", &plot_records(series))?;
        }
        report_files(stderr, &w);
    }
    Ok(())
}
