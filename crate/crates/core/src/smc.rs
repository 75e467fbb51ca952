//! Likelihood-free SMC over a decreasing bandwidth sequence `h_1 > … > h_n`.
//!
//! Particles start as prior-predictive draws weighted by the pooled kernel
//! at `h_1`. Each later step uses one of two weight formulations:
//!
//! * [`SmcVariant::JointMcmcMove`]: reweight by the ratio of joint densities
//!   at `h_k` and `h_{k-1}`, resample when the ESS falls below the
//!   threshold, then move every particle with one carried-bundle MCMC step
//!   that leaves the step-`k` joint target invariant. With the time-reversal
//!   of that kernel as backward kernel, the incremental weight only involves
//!   the pre-move particle.
//! * [`SmcVariant::BackwardKernelApprox`]: draw ancestors from the previous
//!   weighted population, perturb with the mutation kernel, simulate a fresh
//!   bundle and weight by `π̂_{M,k}(θ) / Σ_j W_j M(θ_j, θ)`. No estimate of
//!   the previous target appears, so no extra simulation is needed. Optional
//!   thresholding drops low-weight particles at random.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ess, normalize_log_weights};
use crate::error::{LfsError, Result};
use crate::kernel::SmoothingKernel;
use crate::mcmc::{self, McmcVariant, ProposalSpec, StepContext};
use crate::model::{AuxiliaryBundle, Model, ParamVector};
use crate::rng::{SeedStreams, Stream, StreamTag};
use crate::target::{joint_logdensity_unnorm, WeightedParam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub state: WeightedParam,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BandwidthSchedule {
    /// `n_steps` bandwidths spaced geometrically from `h_start` to `h_end`.
    /// A single step uses `h_end`.
    Geometric {
        h_start: f64,
        h_end: f64,
        n_steps: usize,
    },
    Explicit {
        bandwidths: Vec<f64>,
    },
}

impl BandwidthSchedule {
    pub fn bandwidths(&self) -> Result<Vec<f64>> {
        let hs = match self {
            BandwidthSchedule::Geometric {
                h_start,
                h_end,
                n_steps,
            } => {
                if *n_steps == 0 {
                    return Err(LfsError::config("schedule needs at least one step"));
                }
                if *n_steps == 1 {
                    vec![*h_end]
                } else {
                    let ratio = h_end / h_start;
                    (0..*n_steps)
                        .map(|k| {
                            if k + 1 == *n_steps {
                                *h_end
                            } else {
                                h_start * ratio.powf(k as f64 / (*n_steps - 1) as f64)
                            }
                        })
                        .collect()
                }
            }
            BandwidthSchedule::Explicit { bandwidths } => bandwidths.clone(),
        };
        if hs.is_empty() {
            return Err(LfsError::config("schedule needs at least one bandwidth"));
        }
        if hs.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(LfsError::config("bandwidths must be positive and finite"));
        }
        if hs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LfsError::config("bandwidths must be strictly decreasing"));
        }
        Ok(hs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmcVariant {
    JointMcmcMove,
    BackwardKernelApprox { rejection_threshold: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystem {
    pub particles: Vec<Particle>,
    /// Index into the schedule of the bandwidth the particles target.
    pub step: usize,
    pub bandwidths: Vec<f64>,
    pub ess: f64,
}

impl ParticleSystem {
    pub fn log_weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight).collect()
    }

    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        normalize_log_weights(&self.log_weights())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidths[self.step]
    }

    /// Replaces log weights by their normalised logs and refreshes the ESS.
    fn normalize(&mut self) -> Result<Vec<f64>> {
        let w = self.normalized_weights().ok_or(LfsError::WeightCollapse {
            step: self.step + 1,
        })?;
        for (p, wi) in self.particles.iter_mut().zip(&w) {
            p.log_weight = wi.ln();
        }
        self.ess = ess(&w);
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub s: usize,
    pub n_particles: usize,
    pub schedule: BandwidthSchedule,
    pub variant: SmcVariant,
    /// `None` selects [`ProposalSpec::default_for`].
    pub mutation: Option<ProposalSpec>,
    pub ess_threshold: f64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            s: 1,
            n_particles: 1000,
            schedule: BandwidthSchedule::Geometric {
                h_start: 2.0,
                h_end: 0.25,
                n_steps: 15,
            },
            variant: SmcVariant::JointMcmcMove,
            mutation: None,
            ess_threshold: 0.5,
        }
    }
}

impl SmcConfig {
    pub fn mutation(&self, model: &dyn Model) -> ProposalSpec {
        self.mutation
            .clone()
            .unwrap_or_else(|| ProposalSpec::default_for(model))
    }

    fn validate(&self, model: &dyn Model) -> Result<Vec<f64>> {
        if self.s == 0 {
            return Err(LfsError::config("S must be at least 1"));
        }
        if self.n_particles < 2 {
            return Err(LfsError::config("SMC needs at least two particles"));
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return Err(LfsError::config("ess_threshold must lie in (0, 1]"));
        }
        if let SmcVariant::BackwardKernelApprox {
            rejection_threshold: Some(c),
        } = self.variant
        {
            if !(c > 0.0 && c < 1.0) {
                return Err(LfsError::config("rejection_threshold must lie in (0, 1)"));
            }
        }
        self.mutation(model).validate(model.param_dim())?;
        self.schedule.bandwidths()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub bandwidth: f64,
    /// ESS after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
    /// Fraction of accepted MCMC moves (joint-move variant only).
    pub acceptance_rate: Option<f64>,
    /// Particles dropped by rejection thresholding.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcOutput {
    pub thetas: Vec<ParamVector>,
    pub weights: Vec<f64>,
    pub final_bandwidth: f64,
    pub steps: Vec<StepDiagnostics>,
}

/// `log[K̃_k π(θ_k) L] - log[K̃_{k-1} π(θ_{k-1}) M]` from already assembled
/// numerators. Every incremental weight in the joint formulation goes
/// through here.
pub fn incremental_weight(
    log_num_new: f64,
    log_num_prev: f64,
    log_backward: f64,
    log_forward: f64,
) -> f64 {
    if log_num_new == f64::NEG_INFINITY || log_num_prev == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    log_num_new - log_num_prev + (log_backward - log_forward)
}

/// Joint-space incremental weight between `(θ_{k-1}, t_{k-1})` scored at
/// `h_prev` and `(θ_k, t_k)` scored at `h_k`, given log backward and forward
/// kernel densities on `θ`. The simulator factors of the mutation and
/// backward kernels cancel against those of the targets.
#[allow(clippy::too_many_arguments)]
pub fn incremental_weight_joint(
    prev_theta: &[f64],
    prev_bundle: &AuxiliaryBundle,
    new_theta: &[f64],
    new_bundle: &AuxiliaryBundle,
    h_k: f64,
    h_prev: f64,
    t_y: &[f64],
    kernel: &SmoothingKernel,
    model: &dyn Model,
    log_backward: f64,
    log_forward: f64,
) -> Result<f64> {
    let new = joint_logdensity_unnorm(
        new_theta,
        new_bundle,
        t_y,
        &kernel.at_bandwidth(h_k)?,
        model,
    );
    let prev = joint_logdensity_unnorm(
        prev_theta,
        prev_bundle,
        t_y,
        &kernel.at_bandwidth(h_prev)?,
        model,
    );
    Ok(incremental_weight(new, prev, log_backward, log_forward))
}

/// `log π̂_{M,k}(θ) - log Σ_j W_j M(θ_j → θ)` over the previous population.
pub fn incremental_weight_backward(
    theta_new: &[f64],
    log_num_new: f64,
    prev: &[(ParamVector, f64)],
    mutation: &ProposalSpec,
    model: &dyn Model,
) -> f64 {
    if log_num_new == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut max = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(prev.len());
    for (theta, w) in prev {
        if *w <= 0.0 {
            continue;
        }
        let t = w.ln() + mutation.log_density(theta, theta_new, model);
        max = max.max(t);
        terms.push(t);
    }
    assert!(
        max > f64::NEG_INFINITY,
        "mixture denominator vanished: previous population carries no weight"
    );
    let log_mix = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    log_num_new - log_mix
}

/// Systematic resampling indices for normalised `weights`.
pub fn systematic_indices(weights: &[f64], n: usize, rng: &mut Stream) -> Vec<usize> {
    let u: f64 = rng.random();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    for i in 0..n {
        let pos = (i as f64 + u) / n as f64;
        while cum < pos && j < last {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Systematic resampling of a particle system; offspring get weight `1/N`.
pub fn resample_systematic(system: &ParticleSystem, rng: &mut Stream) -> Result<ParticleSystem> {
    let weights = system
        .normalized_weights()
        .ok_or(LfsError::WeightCollapse {
            step: system.step + 1,
        })?;
    let n = system.particles.len();
    let log_uniform = -(n as f64).ln();
    let particles = systematic_indices(&weights, n, rng)
        .into_iter()
        .map(|i| Particle {
            state: system.particles[i].state.clone(),
            log_weight: log_uniform,
        })
        .collect();
    Ok(ParticleSystem {
        particles,
        step: system.step,
        bandwidths: system.bandwidths.clone(),
        ess: n as f64,
    })
}

/// A reweighting event of the joint-move variant, reported in particle order.
pub struct ReweightEvent<'a> {
    pub step: usize,
    pub particle: usize,
    /// The particle's state scored at `h_prev`, before reweighting.
    pub prev: &'a WeightedParam,
    /// The same `(θ, t)` rescored at `h_k`.
    pub new: &'a WeightedParam,
    pub h_k: f64,
    pub h_prev: f64,
    pub log_increment: f64,
}

pub fn run_smc(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &SmcConfig,
    streams: &SeedStreams,
) -> Result<SmcOutput> {
    run_smc_inner(model, kernel, t_y, config, streams, None)
}

/// [`run_smc`] with a callback for every joint-move reweighting.
pub fn run_smc_observed(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &SmcConfig,
    streams: &SeedStreams,
    observer: &mut dyn FnMut(&ReweightEvent<'_>),
) -> Result<SmcOutput> {
    run_smc_inner(model, kernel, t_y, config, streams, Some(observer))
}

fn initialize(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &SmcConfig,
    bandwidths: Vec<f64>,
    streams: &SeedStreams,
) -> Result<ParticleSystem> {
    let k1 = kernel.at_bandwidth(bandwidths[0])?;
    let particles = (0..config.n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(StreamTag::SmcInit, i as u64, 0);
            let theta = model.prior_sample(&mut rng);
            let bundle = model.simulate(&theta, config.s, &mut rng)?;
            let log_num = joint_logdensity_unnorm(&theta, &bundle, t_y, &k1, model);
            // prior-predictive proposal: the importance weight is the pooled kernel
            let log_weight = k1.log_pooled(t_y, &bundle);
            Ok(Particle {
                state: WeightedParam {
                    theta,
                    bundle,
                    log_num,
                },
                log_weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleSystem {
        particles,
        step: 0,
        bandwidths,
        ess: 0.0,
    })
}

fn run_smc_inner(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &SmcConfig,
    streams: &SeedStreams,
    mut observer: Option<&mut dyn FnMut(&ReweightEvent<'_>)>,
) -> Result<SmcOutput> {
    let bandwidths = config.validate(model)?;
    if t_y.len() != model.summary_dim() {
        return Err(LfsError::config(
            "observed summaries have the wrong dimension",
        ));
    }
    kernel.distance().check_dim(model.summary_dim())?;
    let mutation = config.mutation(model);
    let n = config.n_particles;

    let mut system = initialize(model, kernel, t_y, config, bandwidths.clone(), streams)?;
    system.normalize()?;
    let mut steps = vec![StepDiagnostics {
        step: 1,
        bandwidth: bandwidths[0],
        ess: system.ess,
        resampled: false,
        acceptance_rate: None,
        dropped: 0,
    }];

    for k in 1..bandwidths.len() {
        let (h_k, h_prev) = (bandwidths[k], bandwidths[k - 1]);
        let kernel_k = kernel.at_bandwidth(h_k)?;
        let diag = match config.variant {
            SmcVariant::JointMcmcMove => joint_move_step(
                &mut system,
                k,
                &kernel_k,
                h_prev,
                t_y,
                model,
                config,
                &mutation,
                streams,
                observer.as_deref_mut(),
            )?,
            SmcVariant::BackwardKernelApprox {
                rejection_threshold,
            } => backward_step(
                &mut system,
                k,
                &kernel_k,
                t_y,
                model,
                config,
                &mutation,
                rejection_threshold,
                streams,
            )?,
        };
        log::debug!("smc step {}: h = {h_k}, ess = {:.1}", k + 1, diag.ess);
        steps.push(diag);
    }

    let weights = system
        .normalized_weights()
        .ok_or(LfsError::WeightCollapse {
            step: bandwidths.len(),
        })?;
    debug_assert_eq!(weights.len(), n);
    Ok(SmcOutput {
        thetas: system
            .particles
            .iter()
            .map(|p| p.state.theta.clone())
            .collect(),
        weights,
        final_bandwidth: *bandwidths.last().expect("validated nonempty"),
        steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn joint_move_step<'o>(
    system: &mut ParticleSystem,
    k: usize,
    kernel_k: &SmoothingKernel,
    h_prev: f64,
    t_y: &[f64],
    model: &dyn Model,
    config: &SmcConfig,
    mutation: &ProposalSpec,
    streams: &SeedStreams,
    observer: Option<&mut (dyn FnMut(&ReweightEvent<'_>) + 'o)>,
) -> Result<StepDiagnostics> {
    let n = system.particles.len();
    let h_k = kernel_k.bandwidth();

    // reweight: the identity move on (θ, t) with L = M, scored at both bandwidths
    let rescored: Vec<(WeightedParam, f64)> = system
        .particles
        .par_iter()
        .map(|p| {
            let prev = &p.state;
            let log_num_new =
                joint_logdensity_unnorm(&prev.theta, &prev.bundle, t_y, kernel_k, model);
            let inc = incremental_weight(log_num_new, prev.log_num, 0.0, 0.0);
            (
                WeightedParam {
                    theta: prev.theta.clone(),
                    bundle: prev.bundle.clone(),
                    log_num: log_num_new,
                },
                inc,
            )
        })
        .collect();
    if let Some(obs) = observer {
        for (i, (p, (new, inc))) in system.particles.iter().zip(&rescored).enumerate() {
            obs(&ReweightEvent {
                step: k + 1,
                particle: i,
                prev: &p.state,
                new,
                h_k,
                h_prev,
                log_increment: *inc,
            });
        }
    }
    for (p, (new, inc)) in system.particles.iter_mut().zip(rescored) {
        p.state = new;
        p.log_weight += inc;
    }
    system.step = k;
    system.normalize()?;
    let ess_after = system.ess;

    let resampled = system.ess < config.ess_threshold * n as f64;
    if resampled {
        let mut rng = streams.stream(StreamTag::SmcResample, 0, k as u64);
        *system = resample_systematic(system, &mut rng)?;
    }

    let ctx = StepContext {
        model,
        kernel: kernel_k,
        t_y,
        s: config.s,
        proposal: mutation,
    };
    let accepted: Vec<bool> = system
        .particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = streams.stream(StreamTag::SmcMutate, i as u64, k as u64);
            mcmc::step(
                &mut p.state,
                McmcVariant::CarriedBundle,
                &ctx,
                k,
                &mut rng,
                None,
            )
        })
        .collect::<Result<_>>()?;
    let rate = accepted.iter().filter(|a| **a).count() as f64 / n as f64;
    Ok(StepDiagnostics {
        step: k + 1,
        bandwidth: h_k,
        ess: ess_after,
        resampled,
        acceptance_rate: Some(rate),
        dropped: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn backward_step(
    system: &mut ParticleSystem,
    k: usize,
    kernel_k: &SmoothingKernel,
    t_y: &[f64],
    model: &dyn Model,
    config: &SmcConfig,
    mutation: &ProposalSpec,
    rejection_threshold: Option<f64>,
    streams: &SeedStreams,
) -> Result<StepDiagnostics> {
    let n = system.particles.len();
    let prev_w = system
        .normalized_weights()
        .ok_or(LfsError::WeightCollapse { step: k })?;
    let prev: Vec<(ParamVector, f64)> = system
        .particles
        .iter()
        .zip(&prev_w)
        .map(|(p, w)| (p.state.theta.clone(), *w))
        .collect();

    // ancestors drawn from the weighted population, so each new θ has the
    // mixture Σ_j W_j M(θ_j, ·) as its proposal density
    let mut rng = streams.stream(StreamTag::SmcResample, 0, k as u64);
    let ancestors = systematic_indices(&prev_w, n, &mut rng);

    let particles: Vec<Particle> = ancestors
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut rng = streams.stream(StreamTag::SmcMutate, i as u64, k as u64);
            let parent = &system.particles[a].state;
            let theta = mutation.propose(&parent.theta, model, &mut rng);
            if !model.in_support(&theta) {
                return Ok(Particle {
                    state: parent.clone(),
                    log_weight: f64::NEG_INFINITY,
                });
            }
            let bundle = model.simulate(&theta, config.s, &mut rng)?;
            let log_num = joint_logdensity_unnorm(&theta, &bundle, t_y, kernel_k, model);
            let log_weight = incremental_weight_backward(&theta, log_num, &prev, mutation, model);
            Ok(Particle {
                state: WeightedParam {
                    theta,
                    bundle,
                    log_num,
                },
                log_weight,
            })
        })
        .collect::<Result<_>>()?;
    system.particles = particles;
    system.step = k;
    let w = system.normalize()?;
    let ess_after = system.ess;

    let mut dropped = 0;
    if let Some(c) = rejection_threshold {
        dropped = threshold_particles(system, &w, c, k, streams)?;
    }
    Ok(StepDiagnostics {
        step: k + 1,
        bandwidth: kernel_k.bandwidth(),
        ess: ess_after,
        resampled: true,
        acceptance_rate: None,
        dropped,
    })
}

/// Particles with normalised weight below `c/N` survive with probability
/// `w N / c` and are then raised to `c/N`; the rest get zero weight. This
/// keeps every weight unbiased in expectation.
fn threshold_particles(
    system: &mut ParticleSystem,
    w: &[f64],
    c: f64,
    k: usize,
    streams: &SeedStreams,
) -> Result<usize> {
    let n = w.len() as f64;
    let floor = c / n;
    let mut dropped = 0;
    for (i, (p, wi)) in system.particles.iter_mut().zip(w).enumerate() {
        if *wi >= floor || *wi == 0.0 {
            continue;
        }
        let mut rng = streams.stream(StreamTag::SmcThreshold, i as u64, k as u64);
        if rng.random::<f64>() < wi / floor {
            p.log_weight = floor.ln();
        } else {
            p.log_weight = f64::NEG_INFINITY;
            dropped += 1;
        }
    }
    system.normalize()?;
    Ok(dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelKind;
    use crate::model::NormalMean;

    fn rng(i: u64) -> Stream {
        SeedStreams::new(21).stream(StreamTag::Test, i, 0)
    }

    fn bundle(v: &[f64]) -> AuxiliaryBundle {
        AuxiliaryBundle::from_flat(1, v.to_vec()).unwrap()
    }

    #[test]
    fn joint_weight_examples() {
        let model = NormalMean::default();
        let g = SmoothingKernel::new(KernelKind::Gaussian, 1.0).unwrap();
        let b = bundle(&[0.3, -0.2]);
        let w = incremental_weight_joint(
            &[0.1],
            &b,
            &[0.1],
            &b,
            0.7,
            0.7,
            &[0.0],
            &g,
            &model,
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(w, 0.0);

        let u = SmoothingKernel::new(KernelKind::Uniform, 1.0).unwrap();
        let inside = bundle(&[0.1, -0.2]);
        let w = incremental_weight_joint(
            &[0.1],
            &inside,
            &[0.1],
            &inside,
            0.5,
            1.5,
            &[0.0],
            &u,
            &model,
            0.0,
            0.0,
        )
        .unwrap();
        assert!((w - 3f64.ln()).abs() < 1e-12);

        let between = bundle(&[0.8, -1.2]);
        let w = incremental_weight_joint(
            &[0.1],
            &between,
            &[0.1],
            &between,
            0.5,
            1.5,
            &[0.0],
            &u,
            &model,
            0.0,
            0.0,
        )
        .unwrap();
        assert_eq!(w, f64::NEG_INFINITY);
    }

    #[test]
    fn backward_weight_examples() {
        let model = NormalMean::default();
        let rw = ProposalSpec::RandomWalkGaussian { step_sd: vec![0.5] };
        let p = 0.37f64;
        let prev1 = vec![(ParamVector::new(vec![0.2]), 1.0)];
        let m = rw.log_density(&[0.2], &[0.5], &model).exp();
        let w = incremental_weight_backward(&[0.5], p.ln(), &prev1, &rw, &model);
        assert!((w - (p / m).ln()).abs() < 1e-12);

        let prev2 = vec![
            (ParamVector::new(vec![0.2]), 0.5),
            (ParamVector::new(vec![-1.0]), 0.5),
        ];
        let m2 = rw.log_density(&[-1.0], &[0.5], &model).exp();
        let w = incremental_weight_backward(&[0.5], p.ln(), &prev2, &rw, &model);
        assert!((w - (p.ln() - (0.5 * m + 0.5 * m2).ln())).abs() < 1e-12);

        assert_eq!(
            incremental_weight_backward(&[0.5], f64::NEG_INFINITY, &prev2, &rw, &model),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn flat_kernel_with_prior_mutation_keeps_full_ess() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Uniform, 1.0).unwrap();
        let cfg = SmcConfig {
            s: 2,
            n_particles: 500,
            schedule: BandwidthSchedule::Explicit {
                bandwidths: vec![2e12, 1e12],
            },
            variant: SmcVariant::BackwardKernelApprox {
                rejection_threshold: None,
            },
            mutation: Some(ProposalSpec::IndependencePrior),
            ess_threshold: 0.5,
        };
        let out = run_smc(&model, &k, &[0.0], &cfg, &SeedStreams::new(1)).unwrap();
        for d in &out.steps {
            assert!((d.ess - 500.0).abs() < 1e-6, "{d:?}");
        }
    }

    #[test]
    fn ess_examples_through_normalisation() {
        assert!((ess(&[0.01; 100]) - 100.0).abs() < 1e-9);
        assert_eq!(ess(&[1.0, 0.0, 0.0, 0.0]), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    fn system_with(weights: &[f64]) -> ParticleSystem {
        let particles = weights
            .iter()
            .enumerate()
            .map(|(i, w)| Particle {
                state: WeightedParam {
                    theta: ParamVector::new(vec![i as f64]),
                    bundle: bundle(&[0.0]),
                    log_num: 0.0,
                },
                log_weight: w.ln(),
            })
            .collect();
        ParticleSystem {
            particles,
            step: 0,
            bandwidths: vec![1.0],
            ess: 0.0,
        }
    }

    #[test]
    fn systematic_equal_weights_give_one_offspring_each() {
        for seed in 0..50 {
            let sys = system_with(&[0.125; 8]);
            let out = resample_systematic(&sys, &mut rng(seed)).unwrap();
            let mut ids: Vec<f64> = out.particles.iter().map(|p| p.state.theta[0]).collect();
            ids.sort_by(f64::total_cmp);
            assert_eq!(ids, (0..8).map(|i| i as f64).collect::<Vec<_>>());
            assert!(out
                .particles
                .iter()
                .all(|p| (p.log_weight - (0.125f64).ln()).abs() < 1e-15));
        }
    }

    #[test]
    fn systematic_degenerate_weights() {
        let sys = system_with(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let out = resample_systematic(&sys, &mut rng(1)).unwrap();
        assert!(out.particles.iter().all(|p| p.state.theta[0] == 0.0));
        let dead = system_with(&[0.0, 0.0]);
        assert!(matches!(
            resample_systematic(&dead, &mut rng(1)),
            Err(LfsError::WeightCollapse { step: 1 })
        ));
    }

    #[test]
    fn systematic_offspring_are_unbiased() {
        let w = [0.05, 0.3, 0.15, 0.02, 0.28, 0.2];
        let n = w.len();
        let reps = 10_000;
        let mut counts = vec![vec![0.0; reps]; n];
        for r in 0..reps {
            for j in systematic_indices(&w, n, &mut rng(100 + r as u64)) {
                let row: &mut Vec<f64> = &mut counts[j];
                row[r] += 1.0;
            }
        }
        for (j, c) in counts.iter().enumerate() {
            let mean = c.iter().sum::<f64>() / reps as f64;
            let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt().max(1e-12);
            assert!(
                (mean - n as f64 * w[j]).abs() <= 3.0 * se + 1e-12,
                "particle {j}: {mean} vs {}",
                n as f64 * w[j]
            );
        }
    }

    #[test]
    fn schedules() {
        let hs = BandwidthSchedule::Geometric {
            h_start: 2.0,
            h_end: 0.25,
            n_steps: 4,
        }
        .bandwidths()
        .unwrap();
        assert_eq!(hs.len(), 4);
        assert_eq!(hs[0], 2.0);
        assert_eq!(hs[3], 0.25);
        assert!((hs[1] - 1.0).abs() < 1e-12 && (hs[2] - 0.5).abs() < 1e-12);
        assert!(BandwidthSchedule::Explicit {
            bandwidths: vec![1.0, 1.0]
        }
        .bandwidths()
        .is_err());
        assert!(BandwidthSchedule::Explicit {
            bandwidths: vec![1.0, 0.0]
        }
        .bandwidths()
        .is_err());
        assert!(BandwidthSchedule::Geometric {
            h_start: 0.1,
            h_end: 1.0,
            n_steps: 3
        }
        .bandwidths()
        .is_err());
        assert_eq!(
            BandwidthSchedule::Geometric {
                h_start: 2.0,
                h_end: 0.5,
                n_steps: 1
            }
            .bandwidths()
            .unwrap(),
            vec![0.5]
        );
    }

    #[test]
    fn config_errors() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Gaussian, 1.0).unwrap();
        let streams = SeedStreams::new(1);
        for bad in [
            SmcConfig {
                n_particles: 1,
                ..Default::default()
            },
            SmcConfig {
                ess_threshold: 0.0,
                ..Default::default()
            },
            SmcConfig {
                s: 0,
                ..Default::default()
            },
            SmcConfig {
                variant: SmcVariant::BackwardKernelApprox {
                    rejection_threshold: Some(1.5),
                },
                ..Default::default()
            },
        ] {
            assert!(matches!(
                run_smc(&model, &k, &[0.0], &bad, &streams),
                Err(LfsError::Config(_))
            ));
        }
    }

    #[test]
    fn total_collapse_is_reported() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Uniform, 1.0).unwrap();
        let cfg = SmcConfig {
            n_particles: 20,
            schedule: BandwidthSchedule::Explicit {
                bandwidths: vec![1e-12],
            },
            ..Default::default()
        };
        assert!(matches!(
            run_smc(&model, &k, &[0.0], &cfg, &SeedStreams::new(3)),
            Err(LfsError::WeightCollapse { step: 1 })
        ));
    }

    #[test]
    fn weights_normalised_and_ess_bounded() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Gaussian, 1.0).unwrap();
        for variant in [
            SmcVariant::JointMcmcMove,
            SmcVariant::BackwardKernelApprox {
                rejection_threshold: Some(0.5),
            },
        ] {
            let cfg = SmcConfig {
                n_particles: 300,
                schedule: BandwidthSchedule::Geometric {
                    h_start: 2.0,
                    h_end: 0.3,
                    n_steps: 6,
                },
                variant,
                ..Default::default()
            };
            let out = run_smc(&model, &k, &[0.0], &cfg, &SeedStreams::new(4)).unwrap();
            assert!((out.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(out
                .steps
                .iter()
                .all(|d| d.ess >= 1.0 - 1e-9 && d.ess <= 300.0 + 1e-9));
        }
    }

    #[test]
    fn thresholding_drops_only_light_particles() {
        let mut sys = system_with(&[0.7, 0.29, 0.005, 0.005]);
        let w = sys.normalize().unwrap();
        let dropped = threshold_particles(&mut sys, &w, 0.5, 1, &SeedStreams::new(9)).unwrap();
        let after = sys.normalized_weights().unwrap();
        assert!(dropped <= 2);
        assert!(after[0] > 0.0 && after[1] > 0.0);
        for j in 2..4 {
            assert!(after[j] == 0.0 || (after[j] / after[0] - (0.5 / 4.0) / 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_kernel_support_shrinks_with_bandwidth() {
        // with θ and bundles held fixed, tightening h can only remove particles from the support
        let model = NormalMean::default();
        let kernel = SmoothingKernel::new(KernelKind::Uniform, 1.0).unwrap();
        let mut r = rng(7);
        let states: Vec<WeightedParam> = (0..2000)
            .map(|_| {
                let theta = model.prior_sample(&mut r);
                let bundle = model.simulate(&theta, 3, &mut r).unwrap();
                WeightedParam {
                    theta,
                    bundle,
                    log_num: 0.0,
                }
            })
            .collect();
        let mut prev: Option<Vec<bool>> = None;
        for h in [3.0, 2.0, 1.2, 0.7, 0.3, 0.1] {
            let k = kernel.at_bandwidth(h).unwrap();
            let alive: Vec<bool> = states
                .iter()
                .map(|s| k.log_pooled(&[0.0], &s.bundle) > f64::NEG_INFINITY)
                .collect();
            if let Some(p) = &prev {
                assert!(alive.iter().zip(p).all(|(now, before)| !*now || *before));
            }
            prev = Some(alive);
        }
    }
}
