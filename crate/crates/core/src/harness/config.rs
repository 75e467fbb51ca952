//! Run configuration: a TOML document with one table per module.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Command-line flags are applied on top of the parsed file.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{LfsError, Result};
use crate::kernel::{KernelKind, SmoothingKernel, SummaryDistance};
use crate::mcmc::{McmcConfig, McmcVariant, ProposalSpec};
use crate::model::{BernoulliCount, Model, NormalMean, ParamVector};
use crate::rejection::RejectionConfig;
use crate::smc::{BandwidthSchedule, SmcConfig, SmcVariant};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LFS_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Auxiliary datasets per parameter value.
    pub s: usize,
    pub model: ModelSection,
    pub kernel: KernelSection,
    pub reject: RejectSection,
    pub mcmc: McmcSection,
    pub smc: SmcSection,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_917,
            s: 1,
            model: ModelSection::default(),
            kernel: KernelSection::default(),
            reject: RejectSection::default(),
            mcmc: McmcSection::default(),
            smc: SmcSection::default(),
            experiment: ExperimentSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    NormalMean,
    BernoulliCount,
}

impl std::str::FromStr for ModelName {
    type Err = LfsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal-mean" => Ok(Self::NormalMean),
            "bernoulli-count" => Ok(Self::BernoulliCount),
            other => Err(LfsError::config(format!(
                "unknown model '{other}' (expected normal-mean or bernoulli-count)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub name: ModelName,
    /// Observed summary vector.
    pub t_y: Vec<f64>,
    /// normal-mean: prior `N(prior_mean, prior_sd²)`, `t|θ ~ N(θ, tau²)`.
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub tau: f64,
    /// bernoulli-count: number of trials `m`.
    pub trials: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: ModelName::NormalMean,
            t_y: vec![0.0],
            prior_mean: 0.0,
            prior_sd: 1.0,
            tau: 1.0,
            trials: 20,
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<Box<dyn Model>> {
        Ok(match self.name {
            ModelName::NormalMean => {
                Box::new(NormalMean::new(self.prior_mean, self.prior_sd, self.tau)?)
            }
            ModelName::BernoulliCount => Box::new(BernoulliCount::new(self.trials)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub kind: KernelKind,
    /// Bandwidth, and the final bandwidth of SMC runs unless `smc.h_end` is set.
    pub h: f64,
    /// Per-coordinate weights of a weighted Euclidean distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            kind: KernelKind::Gaussian,
            h: 0.5,
            weights: None,
        }
    }
}

impl KernelSection {
    pub fn build(&self) -> Result<SmoothingKernel> {
        let distance = match &self.weights {
            Some(w) => SummaryDistance::weighted(w.clone())?,
            None => SummaryDistance::Euclidean,
        };
        SmoothingKernel::with_distance(self.kind, self.h, distance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RejectSection {
    pub n_accept: usize,
    pub budget: u64,
    pub batch_size: usize,
    /// Also write the accepted auxiliary bundles.
    pub emit_bundles: bool,
}

impl Default for RejectSection {
    fn default() -> Self {
        let d = RejectionConfig::default();
        Self {
            n_accept: d.n_accept,
            budget: d.budget,
            batch_size: d.batch_size,
            emit_bundles: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    RandomWalk,
    Independence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub variant: McmcVariant,
    pub proposal: ProposalKind,
    /// Random-walk step size; half the prior scale when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_sd: Option<f64>,
    pub n_iter: usize,
    /// 10% of `n_iter` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub chains: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    pub init_budget: u64,
}

impl Default for McmcSection {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self {
            variant: d.variant,
            proposal: ProposalKind::RandomWalk,
            step_sd: None,
            n_iter: 20_000,
            burn_in: None,
            thin: d.thin,
            chains: 1,
            init: None,
            init_budget: d.init_budget,
        }
    }
}

fn proposal_spec(
    kind: ProposalKind,
    step_sd: Option<f64>,
    model: &dyn Model,
) -> Option<ProposalSpec> {
    match (kind, step_sd) {
        (ProposalKind::Independence, _) => Some(ProposalSpec::IndependencePrior),
        (ProposalKind::RandomWalk, Some(sd)) => Some(ProposalSpec::RandomWalkGaussian {
            step_sd: vec![sd; model.param_dim()],
        }),
        (ProposalKind::RandomWalk, None) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmcVariantName {
    #[serde(alias = "joint")]
    JointMcmcMove,
    #[serde(alias = "backward")]
    BackwardKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcSection {
    pub variant: SmcVariantName,
    pub n_particles: usize,
    pub h_start: f64,
    /// `kernel.h` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_end: Option<f64>,
    /// Number of bandwidths in the geometric schedule.
    pub steps: usize,
    /// Explicit decreasing schedule; replaces `h_start`, `h_end` and `steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<f64>>,
    pub ess_threshold: f64,
    /// Probabilistic dropping threshold of the backward-kernel variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_threshold: Option<f64>,
    pub proposal: ProposalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_sd: Option<f64>,
}

impl Default for SmcSection {
    fn default() -> Self {
        Self {
            variant: SmcVariantName::JointMcmcMove,
            n_particles: 1000,
            h_start: 4.0,
            h_end: None,
            steps: 10,
            bandwidths: None,
            ess_threshold: 0.5,
            reject_threshold: None,
            proposal: ProposalKind::RandomWalk,
            step_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Level of every hypothesis test.
    pub significance: f64,

    /// Transitions (and SMC reweighting events) per dual-bookkeeping check.
    pub equivalence_iterations: usize,
    pub cross_s: Vec<usize>,
    /// Independent replicates per sampler, used for standard errors.
    pub cross_replicates: usize,
    /// Samples (or particles) per replicate.
    pub cross_samples: usize,
    pub cross_mcmc_thin: usize,
    /// Pass when every pairwise difference is within this many combined SEs.
    pub cross_se_multiple: f64,

    pub mcwm_s: Vec<usize>,
    pub mcwm_chains: usize,
    pub mcwm_iterations: usize,
    pub mcwm_thin: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_level: f64,
    /// Largest allowed ratio between the two variants' mean KS at the largest S.
    pub large_s_ratio: f64,

    pub invariance_s: Vec<usize>,
    pub invariance_samples: usize,
    pub invariance_chains: usize,
    pub invariance_thin: usize,
    pub permutations: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            significance: 0.01,
            equivalence_iterations: 10_000,
            cross_s: vec![1, 5],
            cross_replicates: 50,
            cross_samples: 2000,
            cross_mcmc_thin: 5,
            cross_se_multiple: 3.0,
            mcwm_s: vec![1, 10, 100],
            mcwm_chains: 10,
            mcwm_iterations: 200_000,
            mcwm_thin: 20,
            bootstrap_resamples: 10_000,
            bootstrap_level: 0.99,
            large_s_ratio: 2.0,
            invariance_s: vec![1, 5, 25],
            invariance_samples: 20_000,
            invariance_chains: 10,
            invariance_thin: 100,
            permutations: 999,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Falls back to `$LFS_OUT_DIR`, then the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// File stem; the command name when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LfsError::config(format!("invalid configuration: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serialises")
    }

    /// Loads a TOML file, or the configuration embedded in a CSV or JSON
    /// output of an earlier run.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::from_toml(&crate::harness::output::embedded_config(&text)?),
            Some("json") => {
                let v: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| LfsError::config(format!("invalid JSON: {e}")))?;
                let cfg = v
                    .pointer("/provenance/config")
                    .ok_or_else(|| LfsError::config("JSON file has no provenance.config"))?;
                serde_json::from_value(cfg.clone())
                    .map_err(|e| LfsError::config(format!("invalid embedded config: {e}")))
            }
            _ => Self::from_toml(&text),
        }
    }

    /// The configuration as echoed into outputs. The output location does
    /// not affect results and is left out so that runs written to different
    /// directories stay byte-identical.
    pub fn echo(&self) -> RunConfig {
        let mut c = self.clone();
        c.output.dir = None;
        c
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn prefix(&self, command: &str) -> String {
        self.output
            .prefix
            .clone()
            .unwrap_or_else(|| command.to_string())
    }

    pub fn rejection(&self) -> RejectionConfig {
        RejectionConfig {
            s: self.s,
            n_accept: self.reject.n_accept,
            budget: self.reject.budget,
            batch_size: self.reject.batch_size,
        }
    }

    pub fn mcmc_config(&self, model: &dyn Model) -> Result<McmcConfig> {
        let m = &self.mcmc;
        if m.chains == 0 {
            return Err(LfsError::config("mcmc.chains must be at least 1"));
        }
        Ok(McmcConfig {
            s: self.s,
            variant: m.variant,
            proposal: proposal_spec(m.proposal, m.step_sd, model),
            n_iter: m.n_iter,
            burn_in: m.burn_in,
            thin: m.thin,
            init: m.init.clone().map(ParamVector::new),
            init_budget: m.init_budget,
        })
    }

    pub fn smc_config(&self, model: &dyn Model) -> Result<SmcConfig> {
        let c = &self.smc;
        let schedule = match &c.bandwidths {
            Some(b) => BandwidthSchedule::Explicit {
                bandwidths: b.clone(),
            },
            None => BandwidthSchedule::Geometric {
                h_start: c.h_start,
                h_end: c.h_end.unwrap_or(self.kernel.h),
                n_steps: c.steps,
            },
        };
        let variant = match (c.variant, c.reject_threshold) {
            (SmcVariantName::JointMcmcMove, None) => SmcVariant::JointMcmcMove,
            (SmcVariantName::JointMcmcMove, Some(_)) => {
                return Err(LfsError::config(
                    "smc.reject_threshold applies to the backward-kernel variant only",
                ))
            }
            (SmcVariantName::BackwardKernel, t) => SmcVariant::BackwardKernelApprox {
                rejection_threshold: t,
            },
        };
        Ok(SmcConfig {
            s: self.s,
            n_particles: c.n_particles,
            schedule,
            variant,
            mutation: proposal_spec(c.proposal, c.step_sd, model),
            ess_threshold: c.ess_threshold,
        })
    }

    /// Checks everything that can be checked without running a sampler.
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(LfsError::config("s must be at least 1"));
        }
        let model = self.model.build()?;
        if self.model.t_y.len() != model.summary_dim() {
            return Err(LfsError::config(format!(
                "model.t_y has {} entries, {} expects {}",
                self.model.t_y.len(),
                model.name(),
                model.summary_dim()
            )));
        }
        let kernel = self.kernel.build()?;
        kernel.distance().check_dim(model.summary_dim())?;
        if self.reject.n_accept == 0 || self.reject.batch_size == 0 || self.reject.budget == 0 {
            return Err(LfsError::config(
                "reject.n_accept, reject.batch_size and reject.budget must be positive",
            ));
        }
        let mcmc = self.mcmc_config(model.as_ref())?;
        if mcmc.thin == 0 || mcmc.n_iter <= mcmc.burn_in() {
            return Err(LfsError::config(
                "mcmc needs thin >= 1 and n_iter > burn_in",
            ));
        }
        mcmc.proposal(model.as_ref()).validate(model.param_dim())?;
        let smc = self.smc_config(model.as_ref())?;
        smc.schedule.bandwidths()?;
        smc.mutation(model.as_ref()).validate(model.param_dim())?;
        if !(smc.ess_threshold > 0.0 && smc.ess_threshold <= 1.0) {
            return Err(LfsError::config("smc.ess_threshold must lie in (0, 1]"));
        }
        let e = &self.experiment;
        if !(e.significance > 0.0 && e.significance < 1.0)
            || !(e.bootstrap_level > 0.0 && e.bootstrap_level < 1.0)
        {
            return Err(LfsError::config(
                "experiment.significance and experiment.bootstrap_level must lie in (0, 1)",
            ));
        }
        if [&e.cross_s, &e.mcwm_s, &e.invariance_s]
            .iter()
            .any(|g| g.is_empty() || g.contains(&0))
        {
            return Err(LfsError::config(
                "experiment S grids must be non-empty and contain only positive values",
            ));
        }
        if e.cross_replicates < 2 || e.mcwm_chains < 2 || e.invariance_chains == 0 {
            return Err(LfsError::config(
                "experiments need at least two replicates or chains",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn round_trip_is_identical() {
        let mut c = RunConfig::default();
        c.kernel.weights = Some(vec![2.0]);
        c.mcmc.step_sd = Some(0.3);
        c.mcmc.init = Some(vec![0.1]);
        c.smc.variant = SmcVariantName::BackwardKernel;
        c.smc.reject_threshold = Some(0.2);
        c.smc.bandwidths = Some(vec![2.0, 1.0, 0.5]);
        c.output.prefix = Some("x".into());
        for cfg in [RunConfig::default(), c] {
            let text = cfg.to_toml();
            assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg, "{text}");
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_documents_and_aliases() {
        let c = RunConfig::from_toml(
            "s = 5\n[mcmc]\nvariant = \"fresh\"\n[smc]\nvariant = \"backward\"\n",
        )
        .unwrap();
        assert_eq!(c.s, 5);
        assert_eq!(c.mcmc.variant, McmcVariant::FreshDenominator);
        assert_eq!(c.smc.variant, SmcVariantName::BackwardKernel);
        assert_eq!(c.kernel, KernelSection::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[kernel]\nbandwith = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[kernel]\nkind = \"box\"\n").is_err());
        let mut c = RunConfig::default();
        c.kernel.h = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.t_y = vec![0.0, 1.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.smc.reject_threshold = Some(0.5);
        assert!(c.validate().is_err());
    }

    #[test]
    fn smc_schedule_ends_at_the_kernel_bandwidth() {
        let c = RunConfig::default();
        let model = c.model.build().unwrap();
        let b = c
            .smc_config(model.as_ref())
            .unwrap()
            .schedule
            .bandwidths()
            .unwrap();
        assert_eq!(b.len(), 10);
        assert!((b[9] - c.kernel.h).abs() < 1e-12);
    }

    #[test]
    fn echo_drops_the_output_directory() {
        let mut c = RunConfig::default();
        c.output.dir = Some("/tmp/a".into());
        c.output.prefix = Some("p".into());
        let e = c.echo();
        assert_eq!(e.output.dir, None);
        assert_eq!(e.output.prefix.as_deref(), Some("p"));
    }
}
