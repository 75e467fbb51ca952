//! Generalised likelihood-free rejection sampling over `S ≥ 1` datasets.
//!
//! Each proposal draws `θ ~ π(θ)` and a bundle `t^{1:S} ~ ∏_s f(t^s|θ)`, and
//! is accepted with probability `K̃_h(t_y, t^{1:S}) / K_h(0)`. Accepted pairs
//! are exact draws from the joint posterior over `(θ, t^{1:S})`; dropping the
//! bundles leaves exact draws from the smoothed marginal posterior for every
//! `S`.
//!
//! Proposals are split into fixed-size batches, each with its own substream.
//! Batches run in parallel waves and their acceptances are concatenated in
//! batch order, so the output does not depend on the number of workers.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LfsError, Result};
use crate::kernel::SmoothingKernel;
use crate::model::{AuxiliaryBundle, Model, ParamVector};
use crate::rng::{SeedStreams, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionConfig {
    pub s: usize,
    pub n_accept: usize,
    /// Maximum number of prior proposals before giving up.
    pub budget: u64,
    /// Proposals per substream.
    pub batch_size: usize,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        Self {
            s: 1,
            n_accept: 10_000,
            budget: 100_000_000,
            batch_size: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedDraw {
    pub theta: ParamVector,
    pub bundle: AuxiliaryBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionOutput {
    pub accepted: Vec<AcceptedDraw>,
    pub proposals_used: u64,
    pub acceptance_rate: f64,
}

impl RejectionOutput {
    pub fn thetas(&self) -> Vec<ParamVector> {
        self.accepted.iter().map(|a| a.theta.clone()).collect()
    }
}

/// Acceptance probability `K̃_h / K_h(0)` of a proposal.
pub fn acceptance_probability(
    kernel: &SmoothingKernel,
    t_y: &[f64],
    bundle: &AuxiliaryBundle,
) -> f64 {
    (kernel.log_pooled(t_y, bundle) - kernel.sup_value().ln())
        .exp()
        .min(1.0)
}

const WAVE: u64 = 64;

struct BatchResult {
    /// (index within batch, draw)
    hits: Vec<(u64, AcceptedDraw)>,
}

fn run_batch(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    s: usize,
    size: u64,
    streams: &SeedStreams,
    batch: u64,
) -> Result<BatchResult> {
    let mut rng = streams.stream(StreamTag::Rejection, batch, 0);
    let mut hits = Vec::new();
    for i in 0..size {
        let theta = model.prior_sample(&mut rng);
        let bundle = model.simulate(&theta, s, &mut rng)?;
        let p = acceptance_probability(kernel, t_y, &bundle);
        let u: f64 = rng.random();
        if u < p {
            hits.push((i, AcceptedDraw { theta, bundle }));
        }
    }
    Ok(BatchResult { hits })
}

pub fn run_rejection(
    model: &dyn Model,
    kernel: &SmoothingKernel,
    t_y: &[f64],
    config: &RejectionConfig,
    streams: &SeedStreams,
) -> Result<RejectionOutput> {
    if config.s == 0 || config.n_accept == 0 || config.batch_size == 0 {
        return Err(LfsError::config(
            "rejection needs s >= 1, n_accept >= 1 and batch_size >= 1",
        ));
    }
    if t_y.len() != model.summary_dim() {
        return Err(LfsError::config(
            "observed summaries have the wrong dimension",
        ));
    }
    kernel.distance().check_dim(model.summary_dim())?;

    let batch_size = config.batch_size as u64;
    let n_batches = config.budget.div_ceil(batch_size);
    let mut accepted = Vec::with_capacity(config.n_accept);
    let mut next_batch = 0u64;
    while next_batch < n_batches {
        let wave_end = (next_batch + WAVE).min(n_batches);
        let results: Vec<Result<BatchResult>> = (next_batch..wave_end)
            .into_par_iter()
            .map(|b| {
                let size = batch_size.min(config.budget - b * batch_size);
                run_batch(model, kernel, t_y, config.s, size, streams, b)
            })
            .collect();
        for (b, result) in (next_batch..wave_end).zip(results) {
            for (i, draw) in result?.hits {
                accepted.push(draw);
                if accepted.len() == config.n_accept {
                    let proposals_used = b * batch_size + i + 1;
                    return Ok(RejectionOutput {
                        acceptance_rate: accepted.len() as f64 / proposals_used as f64,
                        accepted,
                        proposals_used,
                    });
                }
            }
        }
        log::debug!(
            "rejection: {} proposals, {} accepted",
            wave_end * batch_size,
            accepted.len()
        );
        next_batch = wave_end;
    }
    Err(LfsError::BudgetExhausted {
        what: format!(
            "rejection sampler ({} of {} accepted)",
            accepted.len(),
            config.n_accept
        ),
        proposals_used: config.budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{ks_statistic, weighted_moments, WeightedSamples};
    use crate::kernel::KernelKind;
    use crate::model::{BernoulliCount, NormalMean};

    #[test]
    fn flat_kernel_accepts_everything() {
        // a huge uniform bandwidth makes K̃ equal to K_h(0) for every draw
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Uniform, 1e12).unwrap();
        let cfg = RejectionConfig {
            s: 3,
            n_accept: 5000,
            ..Default::default()
        };
        let out = run_rejection(&model, &k, &[0.0], &cfg, &SeedStreams::new(1)).unwrap();
        assert_eq!(out.proposals_used, 5000);
        assert_eq!(out.acceptance_rate, 1.0);
        let (mean, var) = weighted_moments(&WeightedSamples::unweighted(&out.thetas()).unwrap());
        assert!(mean[0].abs() < 4.0 / 5000f64.sqrt());
        assert!((var[0] - 1.0).abs() < 0.06);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Uniform, 1e-9).unwrap();
        let cfg = RejectionConfig {
            s: 1,
            n_accept: 10,
            budget: 10_000,
            batch_size: 1000,
        };
        match run_rejection(&model, &k, &[0.0], &cfg, &SeedStreams::new(2)) {
            Err(LfsError::BudgetExhausted { proposals_used, .. }) => {
                assert_eq!(proposals_used, 10_000)
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn output_is_deterministic_and_batch_order_stable() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Gaussian, 0.5).unwrap();
        let cfg = RejectionConfig {
            s: 2,
            n_accept: 3000,
            budget: 1_000_000,
            batch_size: 256,
        };
        let a = run_rejection(&model, &k, &[0.2], &cfg, &SeedStreams::new(3)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool
            .install(|| run_rejection(&model, &k, &[0.2], &cfg, &SeedStreams::new(3)))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.acceptance_rate,
            a.accepted.len() as f64 / a.proposals_used as f64
        );
    }

    #[test]
    fn bernoulli_accepts_stay_in_support_and_match_beta() {
        let model = BernoulliCount::default();
        let k = SmoothingKernel::new(KernelKind::Uniform, 0.5).unwrap();
        let cfg = RejectionConfig {
            s: 1,
            n_accept: 2000,
            ..Default::default()
        };
        let out = run_rejection(&model, &k, &[7.0], &cfg, &SeedStreams::new(4)).unwrap();
        assert!(out
            .accepted
            .iter()
            .all(|a| (0.0..=1.0).contains(&a.theta[0]) && a.bundle.get(0)[0] == 7.0));
        let oracle = model.oracle(&[7.0], &k).unwrap();
        let cdf = |x: f64| oracle.cdf(x);
        let d = ks_statistic(
            &WeightedSamples::unweighted(&out.thetas()).unwrap(),
            &[&cdf],
        )
        .unwrap();
        assert!(d < 1.63 / 2000f64.sqrt(), "KS {d}");
    }

    #[test]
    fn invalid_configuration() {
        let model = NormalMean::default();
        let k = SmoothingKernel::new(KernelKind::Gaussian, 1.0).unwrap();
        let bad = RejectionConfig {
            s: 0,
            ..Default::default()
        };
        assert!(matches!(
            run_rejection(&model, &k, &[0.0], &bad, &SeedStreams::new(1)),
            Err(LfsError::Config(_))
        ));
        let ok = RejectionConfig::default();
        assert!(run_rejection(&model, &k, &[0.0, 1.0], &ok, &SeedStreams::new(1)).is_err());
    }
}
