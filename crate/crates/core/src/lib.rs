//! Estimation error of latent variables in regular hierarchical models.
//!
//! A hierarchical model `p(x, y | w) = p(y | w) p(x | y, w)` has an observable
//! `x` and a latent label `y`. Given observations `X^n`, the labels `Y^n` can be
//! estimated by plugging in the maximum likelihood estimator or by integrating
//! over the Bayes posterior. The Kullback-Leibler error between the true label
//! distribution `q(Y^n | X^n)` and the estimate decays as `c / n`, where the
//! constant `c` is a function of the complete-data and marginal Fisher
//! information matrices:
//!
//! | method | Type I                         | Type II' / III' (fraction `alpha`)         |
//! |--------|--------------------------------|--------------------------------------------|
//! | ML     | `Tr[(I_XY - I_X) I_X^-1] / 2`  | same as Type I                              |
//! | Bayes  | `ln det[I_XY I_X^-1] / 2`      | `ln det[K I_X^-1] / (2 alpha)`, `K = alpha I_XY + (1 - alpha) I_X` |
//!
//! This crate is `no_std` (with `alloc`) and holds the algorithmic core:
//!
//! - [`numerics`]: small dense symmetric linear algebra and quadrature rules.
//! - [`model`]: the two reference families (binomial mixture, unit-variance
//!   Gaussian mixture) with densities, scores and samplers.
//! - [`fisher`]: the information matrices `I_XY`, `I_X`, `J_XY`, `I_{Y|X}`.
//! - [`theory`]: the dominant-order coefficients.
//! - [`estimators`]: EM, label alignment, priors, parameter-space quadrature
//!   and every latent posterior (ML plug-in, Bayes evidence ratio, posterior
//!   mixture, enumeration oracle).
//!
//! Monte Carlo verification, file formats and the command line live in the
//! `latentkl` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(all(feature = "std", not(test)))]
extern crate std;

mod error;
pub(crate) mod math;

pub mod estimators;
pub mod fisher;
pub mod model;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
pub use math::{log_add_exp, log_sum_exp};
