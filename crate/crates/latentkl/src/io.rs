//! CSV writers and readers.
//!
//! Reals are written with 17 significant digits in scientific notation
//! (`{:.16e}`), which round-trips every `f64` exactly and never depends on
//! locale. Missing values (a failed replication, an absent theory target)
//! are empty cells. Every file written here has a reader returning the same
//! record type, so `read(write(x)) == x` bit for bit.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use latentkl_core::fisher::FisherSet;
use latentkl_core::model::{Family, IdentifiabilityReport, ModelSpec, ParamVec};
use latentkl_core::numerics::Matrix;
use latentkl_core::theory::CoefficientReport;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::montecarlo::{
    Comparison, ConvergenceSeries, DifferenceSeries, ErrorEstimate, Extrapolation, Functional, Method, Run,
};

/// Two-sided normal quantile for the 95% intervals of the plot data.
pub const Z95: f64 = 1.959963984540054;

/// `{:.16e}`: 17 significant digits.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

/// A row type with a fixed header.
pub trait Record: DeserializeOwned {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

pub fn write_csv<R: Record, W: Write>(out: W, records: &[R]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_file<R: Record>(path: &Path, records: &[R]) -> Result<()> {
    let file = File::create(path).map_err(|source| io_error(path, source))?;
    write_csv(io::BufWriter::new(file), records).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<R: Record, Rd: io::Read>(input: Rd, path: &Path) -> Result<Vec<R>> {
    let mut rdr = csv::Reader::from_reader(input);
    let csv_error = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            record: 0,
            message: format!("header {:?}, expected {:?}", header.iter().collect::<Vec<_>>(), R::HEADER),
        });
    }
    rdr.deserialize().map(|r| r.map_err(csv_error)).collect()
}

pub fn read_file<R: Record>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).map_err(|source| io_error(path, source))?;
    read_csv(BufReader::new(file), path)
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One `ErrorEstimate` (`summary.csv`).
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SummaryRecord {
    pub functional: Functional,
    pub method: Method,
    pub alpha: f64,
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub seed: u64,
    pub mean: f64,
    pub stderr: f64,
    pub scaled: f64,
    pub scaled_stderr: f64,
}

impl From<&ErrorEstimate> for SummaryRecord {
    fn from(e: &ErrorEstimate) -> Self {
        let (scaled, scaled_stderr) = e.scaled();
        Self {
            functional: e.functional,
            method: e.method,
            alpha: e.alpha,
            n: e.n,
            replications: e.replications,
            failures: e.failures,
            seed: e.seed,
            mean: e.mean,
            stderr: e.stderr,
            scaled,
            scaled_stderr,
        }
    }
}

impl Record for SummaryRecord {
    const HEADER: &'static [&'static str] = &[
        "functional",
        "method",
        "alpha",
        "n",
        "replications",
        "failures",
        "seed",
        "mean",
        "stderr",
        "scaled",
        "scaled_stderr",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.functional.to_string(),
            self.method.to_string(),
            real(self.alpha),
            self.n.to_string(),
            self.replications.to_string(),
            self.failures.to_string(),
            self.seed.to_string(),
            real(self.mean),
            real(self.stderr),
            real(self.scaled),
            real(self.scaled_stderr),
        ]
    }
}

/// One replication value (`replications.csv`); empty `value` = failed.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ReplicationRecord {
    pub functional: Functional,
    pub method: Method,
    pub alpha: f64,
    pub n: usize,
    pub replication: usize,
    pub value: Option<f64>,
}

impl Record for ReplicationRecord {
    const HEADER: &'static [&'static str] = &["functional", "method", "alpha", "n", "replication", "value"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.functional.to_string(),
            self.method.to_string(),
            real(self.alpha),
            self.n.to_string(),
            self.replication.to_string(),
            opt_real(self.value),
        ]
    }
}

pub fn replication_records(estimate: &ErrorEstimate, values: &[Option<f64>]) -> Vec<ReplicationRecord> {
    values
        .iter()
        .enumerate()
        .map(|(r, &value)| ReplicationRecord {
            functional: estimate.functional,
            method: estimate.method,
            alpha: estimate.alpha,
            n: estimate.n,
            replication: r,
            value,
        })
        .collect()
}

pub fn run_records(runs: &[Run]) -> (Vec<SummaryRecord>, Vec<ReplicationRecord>) {
    let summary = runs.iter().map(|r| SummaryRecord::from(&r.estimate)).collect();
    let reps = runs
        .iter()
        .flat_map(|r| replication_records(&r.estimate, &r.values))
        .collect();
    (summary, reps)
}

/// The extrapolation and verdict of one series (`series.csv`).
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SeriesRecord {
    /// `functional/method` for a study, the difference name otherwise.
    pub series: String,
    pub alpha: f64,
    pub seed: u64,
    pub points: usize,
    pub theory: Option<f64>,
    pub coefficient: f64,
    pub stderr: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub chi2: f64,
    /// Largest relative evidence change under grid doubling (Bayes only).
    pub refinement_change: Option<f64>,
    pub verdict: String,
}

impl Record for SeriesRecord {
    const HEADER: &'static [&'static str] = &[
        "series",
        "alpha",
        "seed",
        "points",
        "theory",
        "coefficient",
        "stderr",
        "slope",
        "slope_stderr",
        "chi2",
        "refinement_change",
        "verdict",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.series.clone(),
            real(self.alpha),
            self.seed.to_string(),
            self.points.to_string(),
            opt_real(self.theory),
            real(self.coefficient),
            real(self.stderr),
            real(self.slope),
            real(self.slope_stderr),
            real(self.chi2),
            opt_real(self.refinement_change),
            self.verdict.clone(),
        ]
    }
}

pub fn series_name(s: &ConvergenceSeries) -> String {
    format!("{}/{}", s.functional, s.method)
}

fn fit_record(
    series: String,
    alpha: f64,
    seed: u64,
    points: usize,
    theory: Option<f64>,
    fit: &Extrapolation,
    refinement_change: Option<f64>,
    verdict: &str,
) -> SeriesRecord {
    SeriesRecord {
        series,
        alpha,
        seed,
        points,
        theory,
        coefficient: fit.coefficient,
        stderr: fit.stderr,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        chi2: fit.chi2,
        refinement_change,
        verdict: verdict.to_string(),
    }
}

impl From<&ConvergenceSeries> for SeriesRecord {
    fn from(s: &ConvergenceSeries) -> Self {
        let refinement = s.refinement.iter().map(|r| r.change).reduce(f64::max);
        fit_record(
            series_name(s),
            s.alpha,
            s.seed,
            s.n_grid.len(),
            s.theory,
            &s.extrapolation,
            refinement,
            s.verdict.name(),
        )
    }
}

impl SeriesRecord {
    pub fn from_difference(d: &DifferenceSeries, alpha: f64, seed: u64) -> Self {
        fit_record(
            d.name.to_string(),
            alpha,
            seed,
            d.rows.len(),
            d.theory,
            &d.extrapolation,
            None,
            d.verdict.name(),
        )
    }
}

/// Plot data (`plot.csv`): one `estimate` row per sample size with a 95%
/// interval on `n·D̂`, and one `theory` row holding the horizontal reference.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct PlotRecord {
    pub series: String,
    pub kind: String,
    pub n: Option<usize>,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Record for PlotRecord {
    const HEADER: &'static [&'static str] = &["series", "kind", "n", "value", "ci_low", "ci_high"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.series.clone(),
            self.kind.clone(),
            self.n.map(|n| n.to_string()).unwrap_or_default(),
            real(self.value),
            opt_real(self.ci_low),
            opt_real(self.ci_high),
        ]
    }
}

fn plot_rows(series: &str, points: impl Iterator<Item = (usize, f64, f64)>, theory: Option<f64>) -> Vec<PlotRecord> {
    let mut rows: Vec<PlotRecord> = points
        .map(|(n, v, se)| PlotRecord {
            series: series.to_string(),
            kind: "estimate".into(),
            n: Some(n),
            value: v,
            ci_low: Some(v - Z95 * se),
            ci_high: Some(v + Z95 * se),
        })
        .collect();
    if let Some(t) = theory {
        rows.push(PlotRecord {
            series: series.to_string(),
            kind: "theory".into(),
            n: None,
            value: t,
            ci_low: None,
            ci_high: None,
        });
    }
    rows
}

pub fn plot_records(s: &ConvergenceSeries) -> Vec<PlotRecord> {
    let points = s.estimates.iter().map(|e| {
        let (v, se) = e.scaled();
        (e.n, v, se)
    });
    plot_rows(&series_name(s), points, s.theory)
}

pub fn difference_plot_records(d: &DifferenceSeries) -> Vec<PlotRecord> {
    let points = d.rows.iter().map(|r| {
        let (v, se) = r.scaled();
        (r.n, v, se)
    });
    plot_rows(d.name, points, d.theory)
}

/// One row of a difference series (`compare.csv`).
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CompareRecord {
    pub series: String,
    pub n: usize,
    pub minuend_n: usize,
    pub minuend: f64,
    pub subtrahend: f64,
    pub difference: f64,
    pub stderr: f64,
    pub scaled: f64,
    pub scaled_stderr: f64,
    /// Bootstrap probability that the difference is positive (paired rows).
    pub confidence: Option<f64>,
}

impl Record for CompareRecord {
    const HEADER: &'static [&'static str] = &[
        "series",
        "n",
        "minuend_n",
        "minuend",
        "subtrahend",
        "difference",
        "stderr",
        "scaled",
        "scaled_stderr",
        "confidence",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.series.clone(),
            self.n.to_string(),
            self.minuend_n.to_string(),
            real(self.minuend),
            real(self.subtrahend),
            real(self.difference),
            real(self.stderr),
            real(self.scaled),
            real(self.scaled_stderr),
            opt_real(self.confidence),
        ]
    }
}

pub fn compare_records(d: &DifferenceSeries) -> Vec<CompareRecord> {
    d.rows
        .iter()
        .map(|r| {
            let (scaled, scaled_stderr) = r.scaled();
            CompareRecord {
                series: d.name.to_string(),
                n: r.n,
                minuend_n: r.minuend.n,
                minuend: r.minuend.mean,
                subtrahend: r.subtrahend.mean,
                difference: r.difference,
                stderr: r.stderr,
                scaled,
                scaled_stderr,
                confidence: r.confidence,
            }
        })
        .collect()
}

/// The coefficient tables at one point (`coeffs`), keyed by family, `w*`, `α`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct CoeffsRecord {
    pub family: String,
    pub trials: Option<u32>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub ml_type1: f64,
    pub ml_type2: f64,
    pub ml_type3: f64,
    pub bayes_type1: f64,
    pub bayes_type2p: f64,
    pub bayes_type3p: f64,
    pub gap_ml_bayes: f64,
    pub gap_ml_bayes_alpha: f64,
    /// Empty when some eigenvalue is below one.
    pub supplementary_gain: Option<f64>,
    pub prediction: f64,
}

fn family_name(m: &ModelSpec) -> &'static str {
    match m.family() {
        Family::BinomialMixture { .. } => "binomial",
        Family::GaussianMixture1D => "gaussian",
    }
}

impl CoeffsRecord {
    pub fn new(m: &ModelSpec, w: &ParamVec, r: &CoefficientReport) -> Self {
        let [a, b, c] = w.values();
        Self {
            family: family_name(m).into(),
            trials: m.trials(),
            a,
            b,
            c,
            alpha: r.alpha,
            ml_type1: r.ml_type1,
            ml_type2: r.ml_type2,
            ml_type3: r.ml_type3,
            bayes_type1: r.bayes_type1,
            bayes_type2p: r.bayes_type2p,
            bayes_type3p: r.bayes_type3p,
            gap_ml_bayes: r.gap,
            gap_ml_bayes_alpha: r.gap_alpha,
            supplementary_gain: r.supplementary_gain,
            prediction: r.prediction,
        }
    }
}

impl Record for CoeffsRecord {
    const HEADER: &'static [&'static str] = &[
        "family",
        "trials",
        "a",
        "b",
        "c",
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
    ];

    fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.family.clone(),
            self.trials.map(|t| t.to_string()).unwrap_or_default(),
        ];
        f.extend(
            [
                self.a,
                self.b,
                self.c,
                self.alpha,
                self.ml_type1,
                self.ml_type2,
                self.ml_type3,
                self.bayes_type1,
                self.bayes_type2p,
                self.bayes_type3p,
                self.gap_ml_bayes,
                self.gap_ml_bayes_alpha,
            ]
            .map(real),
        );
        f.push(opt_real(self.supplementary_gain));
        f.push(real(self.prediction));
        f
    }
}

/// Identifiability diagnostics as `quantity,value` rows.
pub fn write_identifiability<W: Write>(mut out: W, r: &IdentifiabilityReport) -> io::Result<()> {
    writeln!(out, "quantity,value")?;
    writeln!(out, "min_mixing,{}", real(r.min_mixing))?;
    writeln!(out, "component_distance,{}", real(r.component_distance))?;
    writeln!(out, "min_eig_ix,{}", real(r.min_eig_ix))?;
    writeln!(out, "ok,{}", r.ok)
}

/// A named matrix block.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixBlock {
    pub name: String,
    pub rows: Vec<Vec<f64>>,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn fisher_blocks(f: &FisherSet) -> Vec<MatrixBlock> {
    [
        ("i_xy", f.i_xy.to_matrix()),
        ("i_x", f.i_x.to_matrix()),
        ("j_xy", f.j_xy.clone()),
        ("i_y_given_x", f.i_y_given_x.to_matrix()),
    ]
    .into_iter()
    .map(|(name, m)| MatrixBlock {
        name: name.into(),
        rows: matrix_rows(&m),
    })
    .collect()
}

/// Matrix blocks: the name on its own line, then one line per row.
pub fn write_blocks<W: Write>(mut out: W, blocks: &[MatrixBlock]) -> io::Result<()> {
    for b in blocks {
        writeln!(out, "{}", b.name)?;
        for row in &b.rows {
            let cells: Vec<String> = row.iter().map(|&v| real(v)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
    }
    Ok(())
}

/// Reads blocks written by [`write_blocks`]: a line that does not parse as
/// numbers starts a new block.
pub fn read_blocks<R: BufRead>(input: R, path: &Path) -> Result<Vec<MatrixBlock>> {
    let mut blocks: Vec<MatrixBlock> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|source| io_error(path, source))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let format_error = |message: String| Error::Format {
            path: path.to_path_buf(),
            record: i + 1,
            message,
        };
        let cells: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match cells {
            Ok(row) => {
                let block = blocks
                    .last_mut()
                    .ok_or_else(|| format_error("numbers before the first block name".into()))?;
                if block.rows.first().is_some_and(|r| r.len() != row.len()) {
                    return Err(format_error(format!("ragged row in block {}", block.name)));
                }
                block.rows.push(row);
            }
            Err(_) if !line.contains(',') => blocks.push(MatrixBlock {
                name: line.to_string(),
                rows: Vec::new(),
            }),
            Err(e) => return Err(format_error(e.to_string())),
        }
    }
    Ok(blocks)
}

/// The files of one study written to a directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| io_error(dir, source))
}

impl Written {
    pub fn file<R: Record>(&mut self, dir: &Path, name: &str, records: &[R]) -> Result<()> {
        let path = dir.join(name);
        write_file(&path, records)?;
        self.files.push(path);
        Ok(())
    }

    pub fn text(&mut self, dir: &Path, name: &str, text: &str) -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| io_error(&path, source))?;
        self.files.push(path);
        Ok(())
    }
}

/// All records of a comparison, in the order written.
pub fn comparison_series(c: &Comparison, alpha: Option<f64>) -> Vec<SeriesRecord> {
    let mut rows = vec![SeriesRecord::from(&c.ml), SeriesRecord::from(&c.bayes)];
    rows.push(SeriesRecord::from_difference(&c.gap, 1.0, c.ml.seed));
    if let Some(s) = &c.supplementary {
        rows.push(SeriesRecord::from_difference(s, alpha.unwrap_or(1.0), c.ml.seed));
    }
    rows
}
