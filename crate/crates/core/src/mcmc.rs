//! Generalised likelihood-free Metropolis–Hastings.
//!
//! Two variants share one acceptance computation:
//!
//! * [`McmcVariant::CarriedBundle`] stores the simulated bundle with the state
//!   and reuses its cached `log K̃ · π` in the denominator. Its stationary
//!   distribution is the joint posterior over `(θ, t^{1:S})` for every `S`,
//!   so the `θ` marginal is the smoothed posterior.
//! * [`McmcVariant::FreshDenominator`] re-simulates the denominator bundle at
//!   the current `θ` on every iteration ("Monte Carlo within Metropolis").
//!   The acceptance ratio is then a ratio of two independent unbiased
//!   estimates, which is biased for finite `S`. It exists as a reference
//!   against which the carried-bundle chain can be compared.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{LfsError, Result};
use crate::kernel::SmoothingKernel;
use crate::model::{Model, ParamVector};
use crate::rng::{SeedStreams, Stream, StreamTag};
use crate::target::{score_fresh, WeightedParam};

/// `(θ_n, t_n^{1:S}, log[K̃ · π(θ_n)])`.
pub type ChainState = WeightedParam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProposalSpec {
    RandomWalkGaussian { step_sd: Vec<f64> },
    IndependencePrior,
}

impl ProposalSpec {
    /// Random walk with step sd equal to half the prior scale.
    pub fn default_for(model: &dyn Model) -> Self {
        ProposalSpec::RandomWalkGaussian {
            step_sd: model.prior_scale().iter().map(|s| s / 2.0).collect(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ProposalSpec::RandomWalkGaussian { step_sd } => {
                if step_sd.len() != dim {
                    return Err(LfsError::config(format!(
                        "step_sd has {} entries, parameter has {dim}",
                        step_sd.len()
                    )));
                }
                if step_sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(LfsError::config(
                        "step_sd entries must be positive and finite",
                    ));
                }
                Ok(())
            }
            ProposalSpec::IndependencePrior => Ok(()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, ProposalSpec::RandomWalkGaussian { .. })
    }

    pub fn propose(&self, from: &[f64], model: &dyn Model, rng: &mut Stream) -> ParamVector {
        match self {
            ProposalSpec::RandomWalkGaussian { step_sd } => ParamVector::new(
                from.iter()
                    .zip(step_sd)
                    .map(|(x, sd)| {
                        let z: f64 = rng.sample(StandardNormal);
                        x + sd * z
                    })
                    .collect(),
            ),
            ProposalSpec::IndependencePrior => model.prior_sample(rng),
        }
    }

    /// `log q(from → to)`.
    pub fn log_density(&self, from: &[f64], to: &[f64], model: &dyn Model) -> f64 {
        match self {
            ProposalSpec::RandomWalkGaussian { step_sd } => from
                .iter()
                .zip(to)
                .zip(step_sd)
                .map(|((a, b), sd)| {
                    let z = (b - a) / sd;
                    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
                })
                .sum(),
            ProposalSpec::IndependencePrior => model.prior_logdensity(to),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McmcVariant {
    #[serde(alias = "carried")]
    CarriedBundle,
    #[serde(alias = "fresh")]
    FreshDenominator,
}

impl McmcVariant {
    pub fn label(&self) -> &'static str {
        match self {
            McmcVariant::CarriedBundle => "carried-bundle",
            McmcVariant::FreshDenominator => "fresh-denominator (biased reference variant)",
        }
    }
}

/// Log Metropolis–Hastings ratio
/// `log[K̃' π(θ') q(θ' → θ)] - log[K̃ π(θ) q(θ → θ')]`.
///
/// This is the only acceptance computation in the crate. Reading the cached
/// numerators as Monte Carlo marginal estimates or as joint densities with
/// the simulator terms cancelled gives the same inputs and so the same
/// value. A `-inf` proposed numerator always rejects, including when the
/// current numerator is also `-inf`; a `-inf` current numerator with a
/// positive proposed one always accepts.
pub fn acceptance_logratio(
    log_num_prop: f64,
    log_num_curr: f64,
    theta_prop: &[f64],
    theta_curr: &[f64],
    proposal: &ProposalSpec,
    model: &dyn Model,
) -> f64 {
    if log_num_prop == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if log_num_curr == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let log_q_ratio = if proposal.is_symmetric() {
        0.0
    } else {
        proposal.log_density(theta_prop, theta_curr, model)
            - proposal.log_density(theta_curr, theta_prop, model)
    };
    log_num_prop - log_num_curr + log_q_ratio
}

/// Metropolis–Hastings acceptance test for a log ratio.
pub fn accept(log_ratio: f64, rng: &mut Stream) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio == f64::NEG_INFINITY {
        return false;
    }
    rng.random::<f64>() < log_ratio.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub s: usize,
    pub variant: McmcVariant,
    /// `None` selects [`ProposalSpec::default_for`].
    pub proposal: Option<ProposalSpec>,
    pub n_iter: usize,
    /// `None` means 10% of `n_iter`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub init: Option<ParamVector>,
    /// Attempts allowed to find a starting state with nonzero pooled kernel.
    pub init_budget: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            s: 1,
            variant: McmcVariant::CarriedBundle,
            proposal: None,
            n_iter: 10_000,
            burn_in: None,
            thin: 1,
            init: None,
            init_budget: 1_000_000,
        }
    }
}

impl McmcConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_iter / 10)
    }

    pub fn proposal(&self, model: &dyn Model) -> ProposalSpec {
        self.proposal
            .clone()
            .unwrap_or_else(|| ProposalSpec::default_for(model))
    }

    fn validate(&self, model: &dyn Model) -> Result<()> {
        if self.s == 0 {
            return Err(LfsError::config("S must be at least 1"));
        }
        if self.thin == 0 {
            return Err(LfsError::config("thin must be at least 1"));
        }
        if self.n_iter <= self.burn_in() {
            return Err(LfsError::config(format!(
                "n_iter ({}) must exceed burn_in ({})",
                self.n_iter,
                self.burn_in()
            )));
        }
        self.proposal(model).validate(model.param_dim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub iteration: usize,
    pub theta: ParamVector,
    pub accepted: bool,
    pub log_num: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub variant: McmcVariant,
    pub records: Vec<ChainRecord>,
    pub accepted: u64,
    pub n_iter: usize,
}

impl ChainOutput {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.n_iter as f64
    }

    pub fn thetas(&self) -> Vec<ParamVector> {
        self.records.iter().map(|r| r.theta.clone()).collect()
    }
}

/// One Metropolis–Hastings transition, as seen by an observer.
pub struct Transition<'a> {
    pub iteration: usize,
    pub before: &'a ChainState,
    /// State whose numerator sat in the denominator: `before` for the
    /// carried-bundle chain, a freshly simulated state otherwise.
    pub denominator: &'a ChainState,
    /// `None` when the proposed `θ` fell outside the prior support and no
    /// bundle was simulated.
    pub proposed: Option<&'a ChainState>,
    pub proposed_theta: &'a ParamVector,
    pub log_ratio: f64,
    pub accepted: bool,
    pub after: &'a ChainState,
}

/// Draws a starting state with nonzero pooled kernel.
pub fn initial_state(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    s: usize,
    init: Option<&ParamVector>,
    budget: u64,
    rng: &mut Stream,
) -> Result<ChainState> {
    if let Some(theta) = init {
        if theta.len() != model.param_dim() || !model.in_support(theta) {
            return Err(LfsError::Domain {
                model: model.name().to_string(),
                theta: theta.to_vec(),
            });
        }
    }
    for _ in 0..budget {
        let theta = match init {
            Some(t) => t.clone(),
            None => model.prior_sample(rng),
        };
        let state = score_fresh(theta, s, t_y, kernel, model, rng)?;
        if state.log_num > f64::NEG_INFINITY {
            return Ok(state);
        }
    }
    Err(LfsError::BudgetExhausted {
        what: "MCMC initialisation".into(),
        proposals_used: budget,
    })
}

/// Everything a single transition needs besides the state.
pub struct StepContext<'a> {
    pub model: &'a dyn Model,
    pub kernel: &'a SmoothingKernel,
    pub t_y: &'a [f64],
    pub s: usize,
    pub proposal: &'a ProposalSpec,
}

/// Performs one transition of the chosen variant in place and returns
/// whether the proposal was accepted.
pub fn step<'o>(
    state: &mut ChainState,
    variant: McmcVariant,
    ctx: &StepContext<'_>,
    iteration: usize,
    rng: &mut Stream,
    observer: Option<&mut (dyn FnMut(&Transition<'_>) + 'o)>,
) -> Result<bool> {
    let theta_prop = ctx.proposal.propose(&state.theta, ctx.model, rng);
    let proposed = if ctx.model.in_support(&theta_prop) {
        Some(score_fresh(
            theta_prop.clone(),
            ctx.s,
            ctx.t_y,
            ctx.kernel,
            ctx.model,
            rng,
        )?)
    } else {
        None
    };
    let fresh = match (variant, &proposed) {
        (McmcVariant::FreshDenominator, Some(_)) => Some(score_fresh(
            state.theta.clone(),
            ctx.s,
            ctx.t_y,
            ctx.kernel,
            ctx.model,
            rng,
        )?),
        _ => None,
    };
    let denominator = fresh.as_ref().unwrap_or(state);
    let log_ratio = match &proposed {
        Some(p) => acceptance_logratio(
            p.log_num,
            denominator.log_num,
            &p.theta,
            &denominator.theta,
            ctx.proposal,
            ctx.model,
        ),
        None => f64::NEG_INFINITY,
    };
    let accepted = accept(log_ratio, rng);
    match observer {
        Some(obs) => {
            let before = state.clone();
            if accepted {
                *state = proposed.clone().expect("accepted proposals are in support");
            }
            obs(&Transition {
                iteration,
                before: &before,
                denominator: fresh.as_ref().unwrap_or(&before),
                proposed: proposed.as_ref(),
                proposed_theta: &theta_prop,
                log_ratio,
                accepted,
                after: state,
            });
        }
        None => {
            if accepted {
                *state = proposed.expect("accepted proposals are in support");
            }
        }
    }
    Ok(accepted)
}

pub fn run_mcmc(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &McmcConfig,
    rng: &mut Stream,
) -> Result<ChainOutput> {
    run_mcmc_inner(model, kernel, t_y, config, rng, None)
}

/// [`run_mcmc`] with a callback invoked after every transition.
pub fn run_mcmc_observed(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &McmcConfig,
    rng: &mut Stream,
    observer: &mut dyn FnMut(&Transition<'_>),
) -> Result<ChainOutput> {
    run_mcmc_inner(model, kernel, t_y, config, rng, Some(observer))
}

fn run_mcmc_inner(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &McmcConfig,
    rng: &mut Stream,
    mut observer: Option<&mut dyn FnMut(&Transition<'_>)>,
) -> Result<ChainOutput> {
    config.validate(model)?;
    if t_y.len() != model.summary_dim() {
        return Err(LfsError::config(
            "observed summaries have the wrong dimension",
        ));
    }
    kernel.distance().check_dim(model.summary_dim())?;
    let proposal = config.proposal(model);
    let burn_in = config.burn_in();
    let ctx = StepContext {
        model,
        kernel,
        t_y,
        s: config.s,
        proposal: &proposal,
    };
    let mut state = initial_state(
        model,
        kernel,
        t_y,
        config.s,
        config.init.as_ref(),
        config.init_budget,
        rng,
    )?;
    let mut records = Vec::with_capacity((config.n_iter - burn_in) / config.thin + 1);
    let mut accepted_total = 0u64;
    for iteration in 0..config.n_iter {
        let accepted = step(
            &mut state,
            config.variant,
            &ctx,
            iteration,
            rng,
            observer.as_deref_mut(),
        )?;
        accepted_total += u64::from(accepted);
        if iteration >= burn_in && (iteration - burn_in).is_multiple_of(config.thin) {
            records.push(ChainRecord {
                iteration,
                theta: state.theta.clone(),
                accepted,
                log_num: state.log_num,
            });
        }
    }
    Ok(ChainOutput {
        variant: config.variant,
        records,
        accepted: accepted_total,
        n_iter: config.n_iter,
    })
}

/// Independent chains on substreams `(Mcmc, chain, 0)`, run in parallel.
pub fn run_chains(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &McmcConfig,
    n_chains: usize,
    streams: &SeedStreams,
) -> Result<Vec<ChainOutput>> {
    (0..n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = streams.stream(StreamTag::Mcmc, c as u64, 0);
            run_mcmc(model, kernel, t_y, config, &mut rng)
        })
        .collect()
}
