//! Tensor Gauss–Legendre quadrature over the three-dimensional parameter space.
//!
//! The grid's normalized log-weights `ln(ω_i φ(w_i))` define a discrete prior
//! on the nodes. Every Bayes quantity is then an exact finite sum over nodes,
//! so identities such as `Σ_Y Z(X, Y) = Z(X)` hold to rounding error and the
//! evidence-ratio and posterior-mixture forms agree exactly. The continuous
//! integrals are approximated to the accuracy of the rule, which is exact for
//! polynomial likelihoods of degree below `2G` in each coordinate.
//!
//! With label-ordered support the two component parameters are mapped onto
//! the triangle `θ_low < θ_high` by `θ_low = lo + (θ_high − lo) s`, `s ∈ (0,1)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln, LN_2};
use crate::model::{joint_log_pair, log_conditional_unchecked, ModelSpec, ParamVec, D, K};
use crate::numerics::gauss_legendre;
use crate::{log_add_exp, log_sum_exp, Error, Result};

use super::prior::{Prior, Support};

/// Default Gauss–Legendre nodes per axis.
pub const DEFAULT_NODES: usize = 64;

/// Posterior weights below this are skipped in predictive sums; their total
/// contribution is bounded by `nodes × SKIP`.
const SKIP: f64 = 1e-22;

/// Likelihood factors of a set of sites.
///
/// Each entry contributes one factor to the integrand: `p(x, y | w)` for
/// `joint`, `p(x | w)` for `marginal`, and `p(y | x, w)` for `conditional`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SiteTerms {
    pub joint: Vec<(f64, usize)>,
    pub marginal: Vec<f64>,
    pub conditional: Vec<(f64, usize)>,
}

impl SiteTerms {
    pub fn marginal(xs: &[f64]) -> Self {
        Self {
            marginal: xs.to_vec(),
            ..Self::default()
        }
    }

    pub fn complete(xs: &[f64], ys: &[usize]) -> Self {
        Self {
            joint: xs.iter().copied().zip(ys.iter().copied()).collect(),
            ..Self::default()
        }
    }

    pub fn conditional(xs: &[f64], ys: &[usize]) -> Self {
        Self {
            conditional: xs.iter().copied().zip(ys.iter().copied()).collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.joint.len() + self.marginal.len() + self.conditional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, m: &ModelSpec) -> Result<()> {
        for &(x, y) in self.joint.iter().chain(&self.conditional) {
            m.check_observation(x)?;
            if y >= K {
                return Err(Error::Domain(alloc::format!("label {y} outside 0..{K}")));
            }
        }
        self.marginal.iter().try_for_each(|&x| m.check_observation(x))
    }
}

/// Per-node log densities for finite support, one column per quantity:
/// `ln p(x, y | w)` in column `x K + y`, then `ln p(x | w)` in column `S K + x`.
/// Column-major so a pass over the grid reads only the columns it uses.
#[derive(Clone, Debug)]
struct SupportTable {
    support: usize,
    columns: Vec<Vec<f64>>,
}

/// Quadrature nodes and normalized log prior weights.
#[derive(Clone, Debug)]
pub struct ParamGrid {
    model: ModelSpec,
    prior: Prior,
    nodes_per_axis: usize,
    points: Vec<[f64; D]>,
    log_prior: Vec<f64>,
    /// `Σ ω_i φ(w_i) − 1` before normalization: how well the rule integrates the prior.
    prior_mass_error: f64,
    table: Option<SupportTable>,
}

impl ParamGrid {
    pub fn new(m: &ModelSpec, prior: &Prior, nodes_per_axis: usize) -> Result<Self> {
        Self::build(m, prior, nodes_per_axis, true)
    }

    /// Same grid without the per-node density table: slower to evaluate but
    /// light on memory, for refinement checks.
    pub fn new_untabulated(m: &ModelSpec, prior: &Prior, nodes_per_axis: usize) -> Result<Self> {
        Self::build(m, prior, nodes_per_axis, false)
    }

    fn build(m: &ModelSpec, prior: &Prior, g: usize, tabulate: bool) -> Result<Self> {
        if g < 2 {
            return Err(Error::Domain(alloc::format!("need at least 2 nodes per axis, got {g}")));
        }
        let base = gauss_legendre(g);
        let axis = |lo: f64, hi: f64| base.mapped(lo, hi);
        let (alo, ahi) = prior.coords[0].range();
        let ax_a = axis(alo, ahi);
        let mut points = Vec::with_capacity(g * g * g);
        let mut log_prior = Vec::with_capacity(g * g * g);
        match prior.support {
            Support::Full => {
                let (blo, bhi) = prior.coords[1].range();
                let (clo, chi) = prior.coords[2].range();
                let ax_b = axis(blo, bhi);
                let ax_c = axis(clo, chi);
                for (&a, &wa) in ax_a.nodes.iter().zip(&ax_a.weights) {
                    let la = ln(wa) + prior.coords[0].log_density(a);
                    for (&b, &wb) in ax_b.nodes.iter().zip(&ax_b.weights) {
                        let lb = la + ln(wb) + prior.coords[1].log_density(b);
                        for (&c, &wc) in ax_c.nodes.iter().zip(&ax_c.weights) {
                            points.push([a, b, c]);
                            log_prior.push(lb + ln(wc) + prior.coords[2].log_density(c));
                        }
                    }
                }
            }
            Support::LabelOrdered { descending } => {
                let (lo, hi) = prior.coords[1].range();
                let ax_h = axis(lo, hi);
                let ax_s = axis(0.0, 1.0);
                for (&a, &wa) in ax_a.nodes.iter().zip(&ax_a.weights) {
                    let la = ln(wa) + prior.coords[0].log_density(a) + LN_2;
                    for (&h, &wh) in ax_h.nodes.iter().zip(&ax_h.weights) {
                        let lh = la + ln(wh) + prior.coords[1].log_density(h) + ln(h - lo);
                        for (&s, &ws) in ax_s.nodes.iter().zip(&ax_s.weights) {
                            let low = lo + (h - lo) * s;
                            let (t1, t2) = if descending { (h, low) } else { (low, h) };
                            points.push([a, t1, t2]);
                            log_prior.push(lh + ln(ws) + prior.coords[2].log_density(low));
                        }
                    }
                }
            }
        }
        let total = log_sum_exp(&log_prior);
        if !total.is_finite() {
            return Err(Error::InvalidPrior("prior has no mass on the grid".into()));
        }
        for v in &mut log_prior {
            *v -= total;
        }
        let table = match (m.trials(), tabulate) {
            (Some(trials), true) => Some(tabulate_support(m, &points, trials as usize + 1)),
            _ => None,
        };
        Ok(Self {
            model: *m,
            prior: *prior,
            nodes_per_axis: g,
            points,
            log_prior,
            prior_mass_error: exp(total) - 1.0,
            table,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> ParamVec {
        ParamVec::new_unchecked(self.points[i])
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    pub fn prior_mass_error(&self) -> f64 {
        self.prior_mass_error
    }

    /// `ln ω_i φ(w_i) + Σ ln(site factors at w_i)` for every node.
    pub fn log_integrand(&self, terms: &SiteTerms) -> Result<Vec<f64>> {
        let mut out = self.log_prior.clone();
        self.add_terms(terms, &mut out)?;
        Ok(out)
    }

    /// `ln Σ_i ω_i φ(w_i) Π(site factors at w_i)`.
    pub fn log_integral(&self, terms: &SiteTerms) -> Result<f64> {
        Ok(log_sum_exp(&self.log_integrand(terms)?))
    }

    /// Adds `Σ ln(site factors at w_i)` to `out[i]`.
    fn add_terms(&self, terms: &SiteTerms, out: &mut [f64]) -> Result<()> {
        terms.validate(&self.model)?;
        match self.model.trials() {
            Some(trials) => self.add_finite(terms, trials as usize + 1, out),
            None => self.add_direct(terms, out),
        }
        Ok(())
    }

    fn add_finite(&self, terms: &SiteTerms, support: usize, out: &mut [f64]) {
        let width = support * (K + 1);
        let mut coef = vec![0.0; width];
        for &(x, y) in &terms.joint {
            coef[x as usize * K + y] += 1.0;
        }
        for &x in &terms.marginal {
            coef[support * K + x as usize] += 1.0;
        }
        for &(x, y) in &terms.conditional {
            coef[x as usize * K + y] += 1.0;
            coef[support * K + x as usize] -= 1.0;
        }
        let sparse: Vec<(usize, f64)> = coef
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (i, c))
            .collect();
        if sparse.is_empty() {
            return;
        }
        match &self.table {
            Some(t) => {
                for &(j, c) in &sparse {
                    for (v, &l) in out.iter_mut().zip(&t.columns[j]) {
                        *v += c * l;
                    }
                }
            }
            None => {
                let mut row = vec![0.0; width];
                for (v, p) in out.iter_mut().zip(&self.points) {
                    fill_row(&self.model, p, support, &mut row);
                    let mut acc = 0.0;
                    for &(j, c) in &sparse {
                        acc += c * row[j];
                    }
                    *v += acc;
                }
            }
        }
    }

    fn add_direct(&self, terms: &SiteTerms, out: &mut [f64]) {
        let m = &self.model;
        for (v, p) in out.iter_mut().zip(&self.points) {
            let w = ParamVec::new_unchecked(*p);
            let mut acc = 0.0;
            for &(x, y) in &terms.joint {
                acc += joint_log_pair(m, &w, x)[y];
            }
            for &x in &terms.marginal {
                let j = joint_log_pair(m, &w, x);
                acc += log_add_exp(j[0], j[1]);
            }
            for &(x, y) in &terms.conditional {
                acc += log_conditional_unchecked(m, &w, x)[y];
            }
            *v += acc;
        }
    }

    /// Posterior `p(w | X^n)` over the nodes.
    pub fn posterior(&self, xs: &[f64]) -> Result<PosteriorGrid<'_>> {
        self.posterior_from_terms(&SiteTerms::marginal(xs))
    }

    /// Posterior proportional to the prior times arbitrary site factors.
    pub fn posterior_from_terms(&self, terms: &SiteTerms) -> Result<PosteriorGrid<'_>> {
        let log_joint = self.log_integrand(terms)?;
        let max = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Domain("posterior has no mass on the grid".into()));
        }
        // One exponential per node gives both the normalizer and the active
        // set: e_i = exp(l_i − max) ≥ SKIP keeps every node with p_i ≥ SKIP,
        // since the normalizer Σ e_i is at least 1.
        let mut total = 0.0;
        let mut active = Vec::new();
        for (i, &l) in log_joint.iter().enumerate() {
            let e = exp(l - max);
            total += e;
            if e >= SKIP {
                active.push((i, e));
            }
        }
        for a in &mut active {
            a.1 /= total;
        }
        Ok(PosteriorGrid {
            grid: self,
            log_joint,
            active,
            log_norm: max + ln(total),
        })
    }
}

fn fill_row(m: &ModelSpec, p: &[f64; D], support: usize, row: &mut [f64]) {
    let w = ParamVec::new_unchecked(*p);
    for x in 0..support {
        let j = joint_log_pair(m, &w, x as f64);
        row[x * K] = j[0];
        row[x * K + 1] = j[1];
        row[support * K + x] = log_add_exp(j[0], j[1]);
    }
}

fn tabulate_support(m: &ModelSpec, points: &[[f64; D]], support: usize) -> SupportTable {
    let width = support * (K + 1);
    let mut columns = vec![Vec::with_capacity(points.len()); width];
    let mut row = vec![0.0; width];
    for p in points {
        fill_row(m, p, support, &mut row);
        for (col, &v) in columns.iter_mut().zip(&row) {
            col.push(v);
        }
    }
    SupportTable { support, columns }
}

/// Normalized posterior weights on a [`ParamGrid`].
#[derive(Clone, Debug)]
pub struct PosteriorGrid<'g> {
    grid: &'g ParamGrid,
    /// Un-normalized `ln ω_i φ(w_i) + ln L(w_i)`.
    log_joint: Vec<f64>,
    /// `(node, weight)` for nodes with weight at least `SKIP`.
    active: Vec<(usize, f64)>,
    log_norm: f64,
}

impl<'g> PosteriorGrid<'g> {
    pub fn grid(&self) -> &'g ParamGrid {
        self.grid
    }

    /// Log normalizer: the log evidence of the sites the posterior conditions on.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Un-normalized log weights (log prior weight plus log likelihood) per node.
    pub fn log_joint(&self) -> &[f64] {
        &self.log_joint
    }

    /// `|Σ_i p_i − 1|` over all nodes.
    pub fn normalization_error(&self) -> f64 {
        let total: f64 = self.log_joint.iter().map(|&l| exp(l - self.log_norm)).sum();
        (total - 1.0).abs()
    }

    /// Number of nodes carrying weight at least `1e-22`.
    pub fn active_nodes(&self) -> usize {
        self.active.len()
    }

    /// `ln E_post[Π site factors]`, over all nodes.
    pub fn log_expect(&self, terms: &SiteTerms) -> Result<f64> {
        let mut v = self.log_joint.clone();
        self.grid.add_terms(terms, &mut v)?;
        Ok(log_sum_exp(&v) - self.log_norm)
    }

    /// `E_post[p(y | x, w)]` for both labels: the Bayes predictive label
    /// distribution at `x`.
    pub fn predictive_conditional(&self, x: f64) -> Result<[f64; K]> {
        let m = &self.grid.model;
        m.check_observation(x)?;
        let mut acc = [0.0; K];
        match &self.grid.table {
            Some(t) => {
                let xi = x as usize;
                let (j0, j1, jm) = (&t.columns[xi * K], &t.columns[xi * K + 1], &t.columns[t.support * K + xi]);
                for &(i, p) in &self.active {
                    acc[0] += p * exp(j0[i] - jm[i]);
                    acc[1] += p * exp(j1[i] - jm[i]);
                }
            }
            None => {
                for &(i, p) in &self.active {
                    let lc = log_conditional_unchecked(m, &self.grid.point(i), x);
                    acc[0] += p * exp(lc[0]);
                    acc[1] += p * exp(lc[1]);
                }
            }
        }
        let total = acc[0] + acc[1];
        Ok([acc[0] / total, acc[1] / total])
    }

    /// `ln E_post[p(x | w)]`: the Bayes predictive density at `x`.
    pub fn predictive_log_marginal(&self, x: f64) -> Result<f64> {
        let m = &self.grid.model;
        m.check_observation(x)?;
        let mut acc = 0.0;
        match &self.grid.table {
            Some(t) => {
                let col = &t.columns[t.support * K + x as usize];
                for &(i, p) in &self.active {
                    acc += p * exp(col[i]);
                }
            }
            None => {
                for &(i, p) in &self.active {
                    let j = joint_log_pair(m, &self.grid.point(i), x);
                    acc += p * exp(log_add_exp(j[0], j[1]));
                }
            }
        }
        Ok(ln(acc))
    }

    /// Posterior mean of the parameter.
    pub fn mean(&self) -> [f64; D] {
        let mut acc = [0.0; D];
        for &(i, p) in &self.active {
            for (a, v) in acc.iter_mut().zip(self.grid.points[i]) {
                *a += p * v;
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{latent_conditional, REF_B_TRUE, REF_C_TRUE};

    fn ref_b() -> (ModelSpec, ParamVec) {
        let m = ModelSpec::ref_b();
        (m, ParamVec::new(&m, REF_B_TRUE).unwrap())
    }

    #[test]
    fn prior_mass_is_exact_for_uniform_priors() {
        let (m, w) = ref_b();
        for prior in [Prior::symmetric(&m, 1.0).unwrap(), Prior::aligned(&m, 1.0, &w).unwrap()] {
            let g = ParamGrid::new(&m, &prior, 16).unwrap();
            assert!(g.prior_mass_error().abs() < 1e-13, "{}", g.prior_mass_error());
            assert_eq!(g.len(), 16 * 16 * 16);
            assert!(g.log_integral(&SiteTerms::default()).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn ordered_nodes_lie_in_the_half_space() {
        let (m, w) = ref_b();
        let prior = Prior::aligned(&m, 1.0, &w).unwrap();
        let g = ParamGrid::new(&m, &prior, 8).unwrap();
        assert!((0..g.len()).all(|i| {
            let p = g.point(i);
            p.theta(0) > p.theta(1)
        }));
    }

    #[test]
    fn tabulated_and_direct_paths_agree() {
        let (m, w) = ref_b();
        let prior = Prior::aligned(&m, 1.0, &w).unwrap();
        let a = ParamGrid::new(&m, &prior, 12).unwrap();
        let b = ParamGrid::new_untabulated(&m, &prior, 12).unwrap();
        let terms = SiteTerms {
            joint: vec![(1.0, 0), (3.0, 1)],
            marginal: vec![0.0, 2.0, 2.0],
            conditional: vec![(3.0, 0)],
        };
        let la = a.log_integral(&terms).unwrap();
        let lb = b.log_integral(&terms).unwrap();
        assert!((la - lb).abs() < 1e-12);
        // Per-node direct evaluation via the model functions.
        let mut direct = a.log_prior().to_vec();
        a.add_direct(&terms, &mut direct);
        assert!((log_sum_exp(&direct) - la).abs() < 1e-12);
    }

    #[test]
    fn predictive_conditional_is_normalized() {
        let (m, w) = ref_b();
        let prior = Prior::aligned(&m, 1.0, &w).unwrap();
        let g = ParamGrid::new(&m, &prior, 24).unwrap();
        let post = g.posterior(&[0.0, 3.0, 3.0, 1.0, 2.0]).unwrap();
        assert!(post.normalization_error() < 1e-12);
        for x in 0..=3 {
            let r = post.predictive_conditional(x as f64).unwrap();
            assert!((r[0] + r[1] - 1.0).abs() < 1e-10);
        }
        let total: f64 = (0..=3).map(|x| post.predictive_log_marginal(x as f64).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concentrated_posterior_matches_the_plug_in() {
        let (m, w) = ref_b();
        let prior = Prior::concentrated(&m, &w, 1e-5).unwrap();
        let g = ParamGrid::new(&m, &prior, 6).unwrap();
        let post = g.posterior(&[1.0, 2.0]).unwrap();
        for x in 0..=3 {
            let r = post.predictive_conditional(x as f64).unwrap();
            let q = latent_conditional(&m, &w, x as f64).unwrap();
            assert!((r[0] - q[0]).abs() < 1e-4);
        }
    }

    #[test]
    fn gaussian_grid_posterior() {
        let g = ModelSpec::ref_c();
        let w = ParamVec::new(&g, REF_C_TRUE).unwrap();
        let prior = Prior::aligned(&g, 1.0, &w).unwrap();
        let grid = ParamGrid::new(&g, &prior, 12).unwrap();
        assert!(grid.prior_mass_error().abs() < 1e-13);
        let post = grid.posterior(&[-1.2, 1.7, 0.3]).unwrap();
        let r = post.predictive_conditional(0.1).unwrap();
        assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
        let m = post.mean();
        assert!(m[1] < m[2]);
    }

}
