//! Single-sampler commands: run, summarise, serialise.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{ks_statistic, weighted_moments, WeightedSamples};
use crate::error::{LfsError, Result};
use crate::harness::config::RunConfig;
use crate::harness::output::{theta_header, to_json, Artifacts, Cell, CsvTable, Provenance};
use crate::kernel::SmoothingKernel;
use crate::mcmc::run_chains;
use crate::model::Model;
use crate::rejection::run_rejection;
use crate::smc::{run_smc, StepDiagnostics};
use crate::SeedStreams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Largest per-marginal KS distance to the oracle, when one exists.
    pub ks_vs_oracle: Option<f64>,
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposals_used: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ess_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub diagnostics: Diagnostics,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub smc_steps: Vec<StepDiagnostics>,
    pub provenance: Provenance,
}

/// Model, kernel and observation built from a validated configuration.
pub struct Problem {
    pub model: Box<dyn Model>,
    pub kernel: SmoothingKernel,
    pub t_y: Vec<f64>,
}

impl Problem {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: config.model.build()?,
            kernel: config.kernel.build()?,
            t_y: config.model.t_y.clone(),
        })
    }
}

/// KS distance to the oracle of `kernel`, or `None` when the model has no
/// oracle for it.
pub fn ks_to_oracle(
    samples: &WeightedSamples,
    problem: &Problem,
    kernel: &SmoothingKernel,
) -> Result<Option<f64>> {
    if problem.model.param_dim() != 1 {
        return Ok(None);
    }
    match problem.model.oracle(&problem.t_y, kernel) {
        Ok(oracle) => {
            let cdf = |x: f64| oracle.cdf(x);
            Ok(Some(ks_statistic(samples, &[&cdf])?))
        }
        Err(LfsError::Capability { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn summarise(
    samples: &WeightedSamples,
    problem: &Problem,
    kernel: &SmoothingKernel,
) -> Result<Diagnostics> {
    let (mean, variance) = weighted_moments(samples);
    Ok(Diagnostics {
        n_samples: samples.len(),
        mean,
        variance,
        ks_vs_oracle: ks_to_oracle(samples, problem, kernel)?,
        acceptance_rate: None,
        proposals_used: None,
        ess_trace: Vec::new(),
    })
}

pub fn reject(config: &RunConfig) -> Result<(Artifacts, RunSummary)> {
    let problem = Problem::from_config(config)?;
    let streams = SeedStreams::new(config.seed);
    let out = run_rejection(
        problem.model.as_ref(),
        &problem.kernel,
        &problem.t_y,
        &config.rejection(),
        &streams,
    )?;
    let dim = problem.model.param_dim();

    let mut table = CsvTable::new(config, &theta_header(dim));
    for a in &out.accepted {
        table.row(&a.theta.iter().map(|&x| Cell::F(x)).collect::<Vec<_>>());
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("csv", table.finish());

    if config.reject.emit_bundles {
        let sdim = problem.model.summary_dim();
        let mut header = vec!["sample".to_string(), "dataset".to_string()];
        header.extend((0..sdim).map(|d| format!("t_{d}")));
        let mut bundles = CsvTable::new(config, &header);
        for (i, a) in out.accepted.iter().enumerate() {
            for (s, t) in a.bundle.iter().enumerate() {
                let mut row = vec![Cell::U(i as u64), Cell::U(s as u64)];
                row.extend(t.iter().map(|&x| Cell::F(x)));
                bundles.row(&row);
            }
        }
        artifacts.add("bundles.csv", bundles.finish());
    }

    let samples = WeightedSamples::unweighted(&out.thetas())?;
    let mut diagnostics = summarise(&samples, &problem, &problem.kernel)?;
    diagnostics.acceptance_rate = Some(out.acceptance_rate);
    diagnostics.proposals_used = Some(out.proposals_used);
    let summary = RunSummary {
        command: "reject".into(),
        diagnostics,
        smc_steps: Vec::new(),
        provenance: Provenance::of(config),
    };
    artifacts.add("json", to_json(&summary));
    Ok((artifacts, summary))
}

pub fn mcmc(config: &RunConfig) -> Result<(Artifacts, RunSummary)> {
    let problem = Problem::from_config(config)?;
    let model = problem.model.as_ref();
    let cfg = config.mcmc_config(model)?;
    let streams = SeedStreams::new(config.seed);
    let chains = run_chains(
        model,
        &problem.kernel,
        &problem.t_y,
        &cfg,
        config.mcmc.chains,
        &streams,
    )?;

    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(theta_header(model.param_dim()));
    header.extend(["accepted".to_string(), "log_num".to_string()]);
    let mut table = CsvTable::new(config, &header);
    let mut thetas = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        for r in &chain.records {
            let mut row = vec![Cell::U(c as u64), Cell::U(r.iteration as u64)];
            row.extend(r.theta.iter().map(|&x| Cell::F(x)));
            row.extend([Cell::B(r.accepted), Cell::F(r.log_num)]);
            table.row(&row);
            thetas.push(r.theta.clone());
        }
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("csv", table.finish());

    let samples = WeightedSamples::unweighted(&thetas)?;
    let mut diagnostics = summarise(&samples, &problem, &problem.kernel)?;
    let accepted: u64 = chains.iter().map(|c| c.accepted).sum();
    let iterations: usize = chains.iter().map(|c| c.n_iter).sum();
    diagnostics.acceptance_rate = Some(accepted as f64 / iterations as f64);
    let summary = RunSummary {
        command: "mcmc".into(),
        diagnostics,
        smc_steps: Vec::new(),
        provenance: Provenance::of(config),
    };
    artifacts.add("json", to_json(&summary));
    Ok((artifacts, summary))
}

pub fn smc(config: &RunConfig) -> Result<(Artifacts, RunSummary)> {
    let problem = Problem::from_config(config)?;
    let model = problem.model.as_ref();
    let cfg = config.smc_config(model)?;
    let streams = SeedStreams::new(config.seed);
    let out = run_smc(model, &problem.kernel, &problem.t_y, &cfg, &streams)?;

    let mut header = vec!["particle".to_string()];
    header.extend(theta_header(model.param_dim()));
    header.push("weight".to_string());
    let mut table = CsvTable::new(config, &header);
    for (i, (theta, w)) in out.thetas.iter().zip(&out.weights).enumerate() {
        let mut row = vec![Cell::U(i as u64)];
        row.extend(theta.iter().map(|&x| Cell::F(x)));
        row.push(Cell::F(*w));
        table.row(&row);
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("csv", table.finish());

    let samples = WeightedSamples::weighted(&out.thetas, &out.weights)?;
    let final_kernel = problem.kernel.at_bandwidth(out.final_bandwidth)?;
    let mut diagnostics = summarise(&samples, &problem, &final_kernel)?;
    diagnostics.ess_trace = out.steps.iter().map(|s| s.ess).collect();
    let moves: Vec<f64> = out.steps.iter().filter_map(|s| s.acceptance_rate).collect();
    if !moves.is_empty() {
        diagnostics.acceptance_rate = Some(moves.iter().sum::<f64>() / moves.len() as f64);
    }
    let summary = RunSummary {
        command: "smc".into(),
        diagnostics,
        smc_steps: out.steps,
        provenance: Provenance::of(config),
    };
    artifacts.add("json", to_json(&summary));
    Ok((artifacts, summary))
}
