//! The JSON experiment description.
//!
//! Every block and every key is optional; an empty document `{}` describes the
//! reference binomial mixture with a Type I ML study. Unknown keys are errors.
//!
//! ```json
//! {
//!   "model": { "family": "binomial", "trial_count": 3, "true_param": [0.5, 0.8, 0.25] },
//!   "prior": { "eta": 1.0, "label_ordered": true },
//!   "study": { "functional": "type1", "method": "ml", "n_grid": [50, 100, 200, 400, 800],
//!              "replications": 4000, "seed": 1 },
//!   "quadrature": { "nodes_per_axis": 64 },
//!   "output": { "directory": "out", "formats": ["summary", "replications", "series", "plot"] }
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use latentkl_core::estimators::{alpha_sites, CoordPrior, Prior, Support, DEFAULT_NODES};
use latentkl_core::model::{validate_identifiability, ModelSpec, ParamVec, REF_B_TRIALS, REF_B_TRUE, REF_C_TRUE};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::{Experiment, Functional, Job, Method, MIN_REPLICATIONS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    #[default]
    Binomial,
    Gaussian,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: FamilyName,
    /// Binomial trials per observation (binomial family only; default 3).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial_count: Option<u32>,
    /// `[a, b, c]`; defaults to the family's reference point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_param: Option<[f64; 3]>,
    /// Prior box `[lo, hi]` on the component means (gaussian family only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_box: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub eta: f64,
    /// Fold the prior onto the labeling of the true parameter.
    pub label_ordered: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            label_ordered: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub functional: Functional,
    pub method: Method,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    /// Required for `type2p` / `type3p`; optional supplementary-gain
    /// fraction for `compare`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub seed: u64,
    pub rao_blackwell: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            functional: Functional::TypeI,
            method: Method::Ml,
            n_grid: vec![50, 100, 200, 400, 800],
            replications: 1000,
            alpha: None,
            seed: 1,
            rao_blackwell: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub nodes_per_axis: usize,
    /// Recompute the evidence on a doubled grid before each Bayes run.
    pub refinement_check: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_axis: DEFAULT_NODES,
            refinement_check: true,
        }
    }
}

/// Files a study may write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFile {
    Summary,
    Replications,
    Series,
    Plot,
}

impl OutputFile {
    pub const ALL: [OutputFile; 4] = [
        OutputFile::Summary,
        OutputFile::Replications,
        OutputFile::Series,
        OutputFile::Plot,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    pub formats: Vec<OutputFile>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: OutputFile::ALL.to_vec(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, file: OutputFile) -> bool {
        self.formats.contains(&file)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub study: StudyConfig,
    pub quadrature: QuadratureConfig,
    pub output: OutputConfig,
}

/// A violated constraint: dotted key and message.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub key: &'static str,
    pub message: String,
}

fn violation(key: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        key,
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Schema-checked parse: syntax, types and unknown keys, not invariants.
    pub fn parse_schema(path: &Path, text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = match e.path().to_string() {
                p if p == "." => "(document)".to_string(),
                p => p,
            };
            let inner = e.inner();
            Error::Config {
                path: path.to_path_buf(),
                key,
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner.to_string()),
            }
        })
    }

    /// Full parse: schema, then every invariant.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let config = Self::parse_schema(path, text)?;
        config.check_in(path, text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    /// Checks the invariants, locating the offending key in `text`.
    pub fn check_in(&self, path: &Path, text: &str) -> Result<()> {
        self.check().map_err(|v| {
            let (line, column) = key_position(text, v.key);
            Error::Config {
                path: path.to_path_buf(),
                key: v.key.to_string(),
                line,
                column,
                message: v.message,
            }
        })
    }

    /// Checks the invariants of a configuration built in code.
    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|v| Error::Invalid(format!("`{}`: {}", v.key, v.message)))
    }

    pub fn check(&self) -> std::result::Result<(), Violation> {
        let m = self.model_spec()?;
        let w = self.true_param(&m)?;
        let report = validate_identifiability(&m, &w);
        if !report.ok {
            return Err(violation(
                "model.true_param",
                format!(
                    "not identifiable (min mixing {:e}, component distance {:e}, min eigenvalue of I_X {:e})",
                    report.min_mixing, report.component_distance, report.min_eig_ix
                ),
            ));
        }
        self.prior_for(&m, &w)?;
        if self.quadrature.nodes_per_axis < 2 {
            return Err(violation("quadrature.nodes_per_axis", "need at least 2 nodes per axis"));
        }
        self.check_study()
    }

    fn check_study(&self) -> std::result::Result<(), Violation> {
        let s = &self.study;
        if s.n_grid.is_empty() || s.n_grid[0] == 0 || s.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(violation(
                "study.n_grid",
                format!("sample sizes must be positive and strictly increasing, got {:?}", s.n_grid),
            ));
        }
        if s.replications < MIN_REPLICATIONS {
            return Err(violation(
                "study.replications",
                format!("need at least {MIN_REPLICATIONS} replications, got {}", s.replications),
            ));
        }
        let ml_only = matches!(s.functional, Functional::TrainingError | Functional::TrainingErrorComplete);
        if ml_only && s.method == Method::Bayes {
            return Err(violation(
                "study.method",
                format!("{} is defined for the ml method only", s.functional),
            ));
        }
        match s.alpha {
            None if s.functional.uses_alpha() => Err(violation(
                "study.alpha",
                format!("{} needs a target fraction alpha", s.functional),
            )),
            None => Ok(()),
            Some(alpha) => {
                for &n in &s.n_grid {
                    alpha_sites(alpha, n).map_err(|e| violation("study.alpha", e.to_string()))?;
                }
                Ok(())
            }
        }
    }

    pub fn model_spec(&self) -> std::result::Result<ModelSpec, Violation> {
        let c = &self.model;
        match c.family {
            FamilyName::Binomial => {
                if c.gaussian_box.is_some() {
                    return Err(violation("model.gaussian_box", "only the gaussian family has a mean box"));
                }
                ModelSpec::binomial(c.trial_count.unwrap_or(REF_B_TRIALS))
                    .map_err(|e| violation("model.trial_count", e.to_string()))
            }
            FamilyName::Gaussian => {
                if c.trial_count.is_some() {
                    return Err(violation("model.trial_count", "only the binomial family has a trial count"));
                }
                Ok(ModelSpec::gaussian())
            }
        }
    }

    pub fn true_param(&self, m: &ModelSpec) -> std::result::Result<ParamVec, Violation> {
        let values = self.model.true_param.unwrap_or(match self.model.family {
            FamilyName::Binomial => REF_B_TRUE,
            FamilyName::Gaussian => REF_C_TRUE,
        });
        ParamVec::new(m, values).map_err(|e| violation("model.true_param", e.to_string()))
    }

    fn prior_for(&self, m: &ModelSpec, w: &ParamVec) -> std::result::Result<Prior, Violation> {
        let eta = self.prior.eta;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(violation("prior.eta", format!("must be positive and finite, got {eta}")));
        }
        let mut prior = Prior::symmetric(m, eta).map_err(|e| violation("prior.eta", e.to_string()))?;
        if let Some([lo, hi]) = self.model.gaussian_box {
            let b = CoordPrior::Uniform { lo, hi };
            prior = Prior::new(m, [prior.coords[0], b, b], Support::Full)
                .map_err(|e| violation("model.gaussian_box", e.to_string()))?;
        }
        if self.prior.label_ordered {
            if w.theta(0) == w.theta(1) {
                return Err(violation("prior.label_ordered", "cannot order labels of equal components"));
            }
            prior.support = Support::LabelOrdered {
                descending: w.theta(0) > w.theta(1),
            };
        }
        prior.check_support(w).map_err(|e| {
            let key = if self.model.gaussian_box.is_some() {
                "model.gaussian_box"
            } else {
                "model.true_param"
            };
            violation(key, e.to_string())
        })?;
        Ok(prior)
    }

    pub fn prior(&self) -> Result<Prior> {
        let m = self.model_spec().map_err(into_invalid)?;
        let w = self.true_param(&m).map_err(into_invalid)?;
        self.prior_for(&m, &w).map_err(into_invalid)
    }

    /// The experiment this configuration describes.
    pub fn experiment(&self) -> Result<Experiment> {
        self.validate()?;
        let m = self.model_spec().map_err(into_invalid)?;
        let w = self.true_param(&m).map_err(into_invalid)?;
        let mut exp = Experiment::new(m, w, self.prior()?, self.quadrature.nodes_per_axis)?;
        exp.rao_blackwell = self.study.rao_blackwell;
        exp.refinement_check = self.quadrature.refinement_check;
        Ok(exp)
    }

    pub fn job(&self) -> Job {
        Job::with_alpha(self.study.functional, self.study.method, self.study.alpha.unwrap_or(1.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

fn into_invalid(v: Violation) -> Error {
    Error::Invalid(format!("`{}`: {}", v.key, v.message))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// serde_json appends " at line L column C"; the error carries those separately.
fn strip_position(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message.to_string(),
    }
}

/// 1-based line and column of a dotted key in a JSON document, found by
/// walking the quoted key names in order. A key the document omits (its
/// default was used) resolves to the deepest enclosing key present, or to
/// the document start.
pub fn key_position(text: &str, key: &str) -> (usize, usize) {
    let mut offset = 0;
    let mut found = None;
    for part in key.split('.') {
        let needle = format!("\"{part}\"");
        let Some(i) = text[offset..].find(&needle) else {
            break;
        };
        let at = offset + i;
        let after = text[at + needle.len()..].trim_start();
        if after.starts_with(':') {
            found = Some(at);
            offset = at + needle.len();
        } else {
            break;
        }
    }
    let at = found.unwrap_or(0);
    let before = &text[..at];
    let line = before.matches('\n').count() + 1;
    let column = at - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}
