//! Instrumented check that the marginal and joint readings of the MCMC
//! acceptance ratio and of the SMC incremental weight are the same
//! computation.
//!
//! The marginal reading treats the cached numerators as Monte Carlo
//! estimates `π̂_M(θ) = π(θ) S⁻¹ Σ_s K_h(t_y - t^s)`. The joint reading
//! writes out every factor of target and proposal on `(θ, t^{1:S})`,
//! including the simulator densities `f(t^s|θ)`, cancels them symbolically,
//! and evaluates what survives. Both readings then go through the single
//! acceptance/weight function used by the samplers, and must reproduce the
//! samplers' recorded values bit for bit.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{LfsError, Result};
use crate::kernel::SmoothingKernel;
use crate::mcmc::{acceptance_logratio, run_mcmc_observed, McmcConfig, ProposalSpec, Transition};
use crate::model::Model;
use crate::rng::Stream;
use crate::smc::{incremental_weight, run_smc_observed, ReweightEvent, SmcConfig};
use crate::target::WeightedParam;
use crate::SeedStreams;

/// Which of the two states in a ratio a factor refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    /// Proposed state (MCMC) or new particle (SMC).
    Numerator,
    /// Current state (MCMC) or previous particle (SMC).
    Denominator,
}

/// A multiplicative factor of a density ratio, kept symbolic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    PooledKernel(Side),
    Prior(Side),
    /// `f(t^s|θ)` of the given side's bundle.
    Simulator {
        side: Side,
        s: usize,
    },
    /// Parameter-space transition density from one side to the other.
    Transition {
        from: Side,
        to: Side,
    },
}

/// Products of factors over products of factors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolicRatio {
    pub numerator: Vec<Factor>,
    pub denominator: Vec<Factor>,
}

impl SymbolicRatio {
    /// Removes factors common to numerator and denominator (as multisets).
    pub fn cancel(&self) -> SymbolicRatio {
        let mut counts: BTreeMap<Factor, i64> = BTreeMap::new();
        for f in &self.numerator {
            *counts.entry(*f).or_default() += 1;
        }
        for f in &self.denominator {
            *counts.entry(*f).or_default() -= 1;
        }
        let mut out = SymbolicRatio::default();
        for (f, c) in counts {
            for _ in 0..c.max(0) {
                out.numerator.push(f);
            }
            for _ in 0..(-c).max(0) {
                out.denominator.push(f);
            }
        }
        out
    }

    fn expect_only(&self, numerator: &[Factor], denominator: &[Factor]) -> Result<()> {
        let mut want_n = numerator.to_vec();
        let mut want_d = denominator.to_vec();
        want_n.sort();
        want_d.sort();
        let (mut got_n, mut got_d) = (self.numerator.clone(), self.denominator.clone());
        got_n.sort();
        got_d.sort();
        if got_n != want_n || got_d != want_d {
            return Err(LfsError::config(format!(
                "unexpected surviving factors: {self:?}"
            )));
        }
        Ok(())
    }
}

fn simulator_factors(side: Side, s: usize) -> impl Iterator<Item = Factor> {
    (0..s).map(move |i| Factor::Simulator { side, s: i })
}

/// Joint target `K̃ · ∏ f · π` on one side.
fn joint_target(side: Side, s: usize) -> Vec<Factor> {
    let mut v = vec![Factor::PooledKernel(side), Factor::Prior(side)];
    v.extend(simulator_factors(side, s));
    v
}

/// Proposal on `(θ, t^{1:S})` that moves `θ` and simulates the destination
/// bundle from the model.
fn joint_proposal(from: Side, to: Side, s: usize) -> Vec<Factor> {
    let mut v = vec![Factor::Transition { from, to }];
    v.extend(simulator_factors(to, s));
    v
}

/// `π_J(θ', t') q[(θ', t') → (θ, t)] / π_J(θ, t) q[(θ, t) → (θ', t')]`.
pub fn mcmc_joint_ratio(s: usize) -> SymbolicRatio {
    let (p, c) = (Side::Numerator, Side::Denominator);
    let mut numerator = joint_target(p, s);
    numerator.extend(joint_proposal(p, c, s));
    let mut denominator = joint_target(c, s);
    denominator.extend(joint_proposal(c, p, s));
    SymbolicRatio {
        numerator,
        denominator,
    }
}

/// `π_{J,k}(θ_k, t_k) L[(θ_k, t_k) → (θ_{k-1}, t_{k-1})] /
///  π_{J,k-1}(θ_{k-1}, t_{k-1}) M[(θ_{k-1}, t_{k-1}) → (θ_k, t_k)]`
/// with both kernels factorised as a `θ` move times simulator draws.
pub fn smc_joint_ratio(s: usize) -> SymbolicRatio {
    mcmc_joint_ratio(s)
}

fn log_pooled_and_prior(
    state: &WeightedParam,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
) -> (f64, f64) {
    (
        kernel.log_pooled(t_y, &state.bundle),
        model.prior_logdensity(&state.theta),
    )
}

/// `log π̂_M(θ)` assembled as a Monte Carlo estimate.
fn log_marginal_estimate(
    state: &WeightedParam,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
) -> f64 {
    let (log_kernel_mean, log_prior) = log_pooled_and_prior(state, t_y, kernel, model);
    if log_prior == f64::NEG_INFINITY || log_kernel_mean == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    log_prior + log_kernel_mean
}

/// Evaluates the surviving `K̃ · π` factors of one side.
fn log_surviving_target(
    state: &WeightedParam,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
) -> f64 {
    let (log_kernel, log_prior) = log_pooled_and_prior(state, t_y, kernel, model);
    if log_kernel == f64::NEG_INFINITY || log_prior == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    log_kernel + log_prior
}

/// Acceptance log ratio read as a ratio of marginal estimates.
pub fn mcmc_marginal_form(
    proposed: &WeightedParam,
    current: &WeightedParam,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
    proposal: &ProposalSpec,
) -> f64 {
    let num = log_marginal_estimate(proposed, t_y, kernel, model);
    let den = log_marginal_estimate(current, t_y, kernel, model);
    acceptance_logratio(num, den, &proposed.theta, &current.theta, proposal, model)
}

/// Acceptance log ratio read as a ratio of joint densities, after symbolic
/// cancellation of the simulator factors.
pub fn mcmc_joint_form(
    proposed: &WeightedParam,
    current: &WeightedParam,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
    proposal: &ProposalSpec,
) -> Result<f64> {
    let (p, c) = (Side::Numerator, Side::Denominator);
    let reduced = mcmc_joint_ratio(proposed.bundle.len()).cancel();
    reduced.expect_only(
        &[
            Factor::PooledKernel(p),
            Factor::Prior(p),
            Factor::Transition { from: p, to: c },
        ],
        &[
            Factor::PooledKernel(c),
            Factor::Prior(c),
            Factor::Transition { from: c, to: p },
        ],
    )?;
    let num = log_surviving_target(proposed, t_y, kernel, model);
    let den = log_surviving_target(current, t_y, kernel, model);
    Ok(acceptance_logratio(
        num,
        den,
        &proposed.theta,
        &current.theta,
        proposal,
        model,
    ))
}

/// Incremental weight read as a ratio of marginal estimates at the two
/// bandwidths.
#[allow(clippy::too_many_arguments)]
pub fn smc_marginal_form(
    new: &WeightedParam,
    prev: &WeightedParam,
    t_y: &[f64],
    kernel_k: &SmoothingKernel,
    kernel_prev: &SmoothingKernel,
    model: &dyn Model,
    log_backward: f64,
    log_forward: f64,
) -> f64 {
    let num = log_marginal_estimate(new, t_y, kernel_k, model);
    let den = log_marginal_estimate(prev, t_y, kernel_prev, model);
    incremental_weight(num, den, log_backward, log_forward)
}

/// Incremental weight read as a ratio of joint densities with factorised
/// forward and backward kernels.
#[allow(clippy::too_many_arguments)]
pub fn smc_joint_form(
    new: &WeightedParam,
    prev: &WeightedParam,
    t_y: &[f64],
    kernel_k: &SmoothingKernel,
    kernel_prev: &SmoothingKernel,
    model: &dyn Model,
    log_backward: f64,
    log_forward: f64,
) -> Result<f64> {
    let (n, p) = (Side::Numerator, Side::Denominator);
    let reduced = smc_joint_ratio(new.bundle.len()).cancel();
    reduced.expect_only(
        &[
            Factor::PooledKernel(n),
            Factor::Prior(n),
            Factor::Transition { from: n, to: p },
        ],
        &[
            Factor::PooledKernel(p),
            Factor::Prior(p),
            Factor::Transition { from: p, to: n },
        ],
    )?;
    let num = log_surviving_target(new, t_y, kernel_k, model);
    let den = log_surviving_target(prev, t_y, kernel_prev, model);
    Ok(incremental_weight(num, den, log_backward, log_forward))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    /// Transitions or reweighting events compared.
    pub compared: usize,
    /// Largest absolute difference among the sampler's value and both
    /// readings (equal infinities count as zero).
    pub max_abs_discrepancy: f64,
    pub bit_identical: bool,
    pub first_mismatch: Option<usize>,
}

#[derive(Default)]
struct Tally {
    compared: usize,
    max: f64,
    identical: bool,
    first: Option<usize>,
}

impl Tally {
    fn new() -> Self {
        Self {
            identical: true,
            ..Default::default()
        }
    }

    fn record(&mut self, index: usize, values: [f64; 3]) {
        self.compared += 1;
        for a in values {
            for b in values {
                if a.to_bits() != b.to_bits() {
                    self.identical = false;
                    self.first.get_or_insert(index);
                    let d = if a == b { 0.0 } else { (a - b).abs() };
                    self.max = self.max.max(if d.is_nan() { f64::INFINITY } else { d });
                }
            }
        }
    }

    fn finish(self) -> EquivalenceCheck {
        EquivalenceCheck {
            compared: self.compared,
            max_abs_discrepancy: self.max,
            bit_identical: self.identical,
            first_mismatch: self.first,
        }
    }
}

/// Runs a chain and compares, for every transition with a simulated
/// proposal, the recorded log ratio against both readings.
pub fn check_mcmc(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &McmcConfig,
    rng: &mut Stream,
) -> Result<EquivalenceCheck> {
    let proposal = config.proposal(model);
    let mut tally = Tally::new();
    let mut failure = None;
    let mut observer = |t: &Transition<'_>| {
        let Some(proposed) = t.proposed else { return };
        let marginal = mcmc_marginal_form(proposed, t.denominator, t_y, kernel, model, &proposal);
        match mcmc_joint_form(proposed, t.denominator, t_y, kernel, model, &proposal) {
            Ok(joint) => tally.record(t.iteration, [t.log_ratio, marginal, joint]),
            Err(e) => failure = Some(e),
        }
    };
    run_mcmc_observed(model, kernel, t_y, config, rng, &mut observer)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(tally.finish())
}

/// Runs a joint-move SMC sampler and compares every recorded incremental
/// weight against both readings.
pub fn check_smc(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &SmcConfig,
    streams: &SeedStreams,
) -> Result<EquivalenceCheck> {
    let mut tally = Tally::new();
    let mut failure = None;
    let mut observer = |e: &ReweightEvent<'_>| {
        let result = (|| -> Result<()> {
            let k_new = kernel.at_bandwidth(e.h_k)?;
            let k_prev = kernel.at_bandwidth(e.h_prev)?;
            // the reweighting move is the identity on (θ, t), so L = M
            let marginal = smc_marginal_form(e.new, e.prev, t_y, &k_new, &k_prev, model, 0.0, 0.0);
            let joint = smc_joint_form(e.new, e.prev, t_y, &k_new, &k_prev, model, 0.0, 0.0)?;
            tally.record(
                e.step * 1_000_000 + e.particle,
                [e.log_increment, marginal, joint],
            );
            Ok(())
        })();
        if let Err(err) = result {
            failure = Some(err);
        }
    };
    run_smc_observed(model, kernel, t_y, config, streams, &mut observer)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(tally.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelKind;
    use crate::mcmc::McmcVariant;
    use crate::model::NormalMean;
    use crate::smc::{BandwidthSchedule, SmcVariant};
    use crate::StreamTag;

    #[test]
    fn simulator_factors_cancel() {
        let reduced = mcmc_joint_ratio(4).cancel();
        assert_eq!(reduced.numerator.len(), 3);
        assert_eq!(reduced.denominator.len(), 3);
        assert!(reduced
            .numerator
            .iter()
            .chain(&reduced.denominator)
            .all(|f| !matches!(f, Factor::Simulator { .. })));
    }

    #[test]
    fn a_proposal_without_simulator_factors_does_not_cancel() {
        // if the proposal did not simulate the destination bundle from the
        // model, f(t'|θ') would survive and the joint reading would need it
        let (p, c) = (Side::Numerator, Side::Denominator);
        let mut ratio = SymbolicRatio {
            numerator: joint_target(p, 2),
            denominator: joint_target(c, 2),
        };
        ratio.numerator.push(Factor::Transition { from: p, to: c });
        ratio
            .denominator
            .push(Factor::Transition { from: c, to: p });
        let reduced = ratio.cancel();
        assert!(reduced
            .numerator
            .iter()
            .any(|f| matches!(f, Factor::Simulator { .. })));
        assert!(reduced.expect_only(&[], &[]).is_err());
    }

    #[test]
    fn mcmc_readings_agree_for_both_variants() {
        let model = NormalMean::default();
        let kernel = SmoothingKernel::new(KernelKind::Gaussian, 0.7).unwrap();
        for variant in [McmcVariant::CarriedBundle, McmcVariant::FreshDenominator] {
            let cfg = McmcConfig {
                s: 3,
                variant,
                n_iter: 3000,
                ..Default::default()
            };
            let mut rng = SeedStreams::new(3).stream(StreamTag::Test, 0, 0);
            let check = check_mcmc(&model, &kernel, &[0.2], &cfg, &mut rng).unwrap();
            assert_eq!(check.compared, 3000);
            assert!(check.bit_identical, "{check:?}");
            assert_eq!(check.max_abs_discrepancy, 0.0);
        }
    }

    #[test]
    fn smc_readings_agree() {
        let model = NormalMean::default();
        let kernel = SmoothingKernel::new(KernelKind::Uniform, 1.0).unwrap();
        let cfg = SmcConfig {
            s: 2,
            n_particles: 200,
            schedule: BandwidthSchedule::Geometric {
                h_start: 3.0,
                h_end: 0.5,
                n_steps: 6,
            },
            variant: SmcVariant::JointMcmcMove,
            ..Default::default()
        };
        let check = check_smc(&model, &kernel, &[0.0], &cfg, &SeedStreams::new(4)).unwrap();
        assert_eq!(check.compared, 1000);
        assert!(check.bit_identical, "{check:?}");
    }
}
