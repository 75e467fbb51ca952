//! Unnormalised target densities shared by every sampler.
//!
//! The joint posterior over `(θ, t^{1:S})` is
//! `K̃_h(t_y, t^{1:S}) ∏_s f(t^s|θ) π(θ)` up to a constant. Each sampler
//! proposes bundles by simulating from `∏_s f(t^s|θ)`, so that product
//! cancels between target and proposal in every acceptance ratio and
//! importance weight. What survives is `log K̃ + log π(θ)`, which is all
//! [`joint_logdensity_unnorm`] computes. The same number is the log of the
//! Monte Carlo marginal estimate `π̂_M(θ|t_y) = π(θ) S⁻¹ Σ_s K_h(t_y - t^s)`
//! when the bundle was freshly simulated at `θ`.

use serde::{Deserialize, Serialize};

use crate::error::{LfsError, Result};
use crate::kernel::SmoothingKernel;
use crate::model::{AuxiliaryBundle, Model, ParamVector};
use crate::rng::Stream;

/// A parameter together with its bundle and the cached `log K̃ · π` at the
/// bandwidth it was computed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedParam {
    pub theta: ParamVector,
    pub bundle: AuxiliaryBundle,
    pub log_num: f64,
}

impl WeightedParam {
    /// Recomputes the cached value at another kernel/bandwidth.
    pub fn rescore(&mut self, t_y: &[f64], kernel: &SmoothingKernel, model: &dyn Model) {
        self.log_num = joint_logdensity_unnorm(&self.theta, &self.bundle, t_y, kernel, model);
    }
}

/// `log[K̃_h(t_y, t^{1:S}) π(θ)]`; `-inf` when the pooled kernel is zero.
pub fn joint_logdensity_unnorm(
    theta: &[f64],
    bundle: &AuxiliaryBundle,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
) -> f64 {
    let log_prior = model.prior_logdensity(theta);
    if log_prior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let log_kernel = kernel.log_pooled(t_y, bundle);
    if log_kernel == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    log_kernel + log_prior
}

/// Simulates a fresh bundle of size `s` at `θ` and returns
/// `(log π̂_M(θ|t_y), bundle)`.
pub fn marginal_logestimate(
    theta: &ParamVector,
    s: usize,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
    rng: &mut Stream,
) -> Result<(f64, AuxiliaryBundle)> {
    if !model.in_support(theta) {
        return Err(LfsError::Domain {
            model: model.name().to_string(),
            theta: theta.to_vec(),
        });
    }
    let bundle = model.simulate(theta, s, rng)?;
    let value = joint_logdensity_unnorm(theta, &bundle, t_y, kernel, model);
    Ok((value, bundle))
}

/// Same as [`marginal_logestimate`] but packaged as a [`WeightedParam`].
pub fn score_fresh(
    theta: ParamVector,
    s: usize,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
    rng: &mut Stream,
) -> Result<WeightedParam> {
    let (log_num, bundle) = marginal_logestimate(&theta, s, t_y, kernel, model, rng)?;
    Ok(WeightedParam {
        theta,
        bundle,
        log_num,
    })
}
