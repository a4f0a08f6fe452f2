//! Priors `φ(w; η)` over the parameter domain.
//!
//! A two-component mixture is invariant under swapping its labels, so a prior
//! that is itself swap-symmetric gives a posterior with two mirror-image
//! modes. The Bayes latent posterior then mixes both labelings and no longer
//! targets `q(Y^n | X^n)`. [`Support::LabelOrdered`] restricts the prior to the
//! half-space `θ₁ > θ₂` (or `θ₁ < θ₂`) that contains `w*` and doubles its
//! density there — the same prior, folded onto one labeling.

use alloc::format;

use crate::math::{ln, ln_beta, ln_1p, LN_2};
use crate::model::{Domain, ModelSpec, ParamVec, D, GAUSSIAN_PRIOR_BOX};
use crate::{Error, Result};

/// Prior on one coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoordPrior {
    /// `Beta(alpha, beta)` on `(0, 1)`.
    Beta { alpha: f64, beta: f64 },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl CoordPrior {
    pub fn symmetric_beta(eta: f64) -> Self {
        CoordPrior::Beta {
            alpha: eta,
            beta: eta,
        }
    }

    /// Interval the grid integrates over.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            CoordPrior::Beta { .. } => (0.0, 1.0),
            CoordPrior::Uniform { lo, hi } => (lo, hi),
        }
    }

    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            CoordPrior::Beta { alpha, beta } => {
                if v <= 0.0 || v >= 1.0 {
                    return f64::NEG_INFINITY;
                }
                (alpha - 1.0) * ln(v) + (beta - 1.0) * ln_1p(-v) - ln_beta(alpha, beta)
            }
            CoordPrior::Uniform { lo, hi } => {
                if v < lo || v > hi {
                    f64::NEG_INFINITY
                } else {
                    -ln(hi - lo)
                }
            }
        }
    }

    fn validate(&self, domain: Domain) -> Result<()> {
        match *self {
            CoordPrior::Beta { alpha, beta } => {
                if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(Error::InvalidPrior(format!("Beta({alpha}, {beta}) needs positive shapes")));
                }
                if domain != Domain::UnitInterval {
                    return Err(Error::InvalidPrior("Beta prior on a real-line coordinate".into()));
                }
            }
            CoordPrior::Uniform { lo, hi } => {
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::InvalidPrior(format!("empty uniform box [{lo}, {hi}]")));
                }
                if domain == Domain::UnitInterval && (lo < 0.0 || hi > 1.0) {
                    return Err(Error::InvalidPrior(format!("box [{lo}, {hi}] leaves (0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Which part of the parameter space carries prior mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    Full,
    /// Only `θ₁ > θ₂` (`descending`) or `θ₁ < θ₂`, with doubled density.
    LabelOrdered { descending: bool },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prior {
    pub coords: [CoordPrior; D],
    pub support: Support,
}

impl Prior {
    pub fn new(m: &ModelSpec, coords: [CoordPrior; D], support: Support) -> Result<Self> {
        for (i, c) in coords.iter().enumerate() {
            c.validate(m.domain(i))?;
        }
        if matches!(support, Support::LabelOrdered { .. }) && coords[1] != coords[2] {
            return Err(Error::InvalidPrior(
                "label ordering needs identical priors on both component parameters".into(),
            ));
        }
        Ok(Self { coords, support })
    }

    /// Default prior with hyperparameter `eta` over the whole domain:
    /// `Beta(η, η)` on unit-interval coordinates, the uniform box on means.
    pub fn symmetric(m: &ModelSpec, eta: f64) -> Result<Self> {
        let theta = match m.domain(1) {
            Domain::UnitInterval => CoordPrior::symmetric_beta(eta),
            Domain::RealLine => CoordPrior::Uniform {
                lo: GAUSSIAN_PRIOR_BOX.0,
                hi: GAUSSIAN_PRIOR_BOX.1,
            },
        };
        Self::new(m, [CoordPrior::symmetric_beta(eta), theta, theta], Support::Full)
    }

    /// The symmetric prior folded onto the labeling of `w_star`.
    pub fn aligned(m: &ModelSpec, eta: f64, w_star: &ParamVec) -> Result<Self> {
        let mut p = Self::symmetric(m, eta)?;
        if w_star.theta(0) == w_star.theta(1) {
            return Err(Error::InvalidPrior("cannot order labels at θ₁ = θ₂".into()));
        }
        p.support = Support::LabelOrdered {
            descending: w_star.theta(0) > w_star.theta(1),
        };
        p.check_support(w_star)?;
        Ok(p)
    }

    /// Uniform box of half-width `half_width` around `w_star` (clipped to the
    /// domain): the concentrated-prior limit used to compare with plug-in values.
    pub fn concentrated(m: &ModelSpec, w_star: &ParamVec, half_width: f64) -> Result<Self> {
        let coords = core::array::from_fn(|i| {
            let v = w_star.values()[i];
            let (mut lo, mut hi) = (v - half_width, v + half_width);
            if m.domain(i) == Domain::UnitInterval {
                lo = lo.max(0.0);
                hi = hi.min(1.0);
            }
            CoordPrior::Uniform { lo, hi }
        });
        Self::new(m, coords, Support::Full)
    }

    pub fn in_support(&self, v: &[f64; D]) -> bool {
        match self.support {
            Support::Full => true,
            Support::LabelOrdered { descending } => (v[1] > v[2]) == descending && v[1] != v[2],
        }
    }

    pub fn log_density(&self, w: &ParamVec) -> f64 {
        let v = w.values();
        if !self.in_support(&v) {
            return f64::NEG_INFINITY;
        }
        let base: f64 = self.coords.iter().zip(v).map(|(c, x)| c.log_density(x)).sum();
        match self.support {
            Support::Full => base,
            Support::LabelOrdered { .. } => base + LN_2,
        }
    }

    /// The support condition: the prior density must be positive at `w_star`.
    pub fn check_support(&self, w_star: &ParamVec) -> Result<()> {
        if self.log_density(w_star).is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidPrior(format!(
                "prior density vanishes at the true parameter {:?}",
                w_star.values()
            )))
        }
    }
}
