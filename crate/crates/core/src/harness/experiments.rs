//! The three headline experiments.
//!
//! * `equivalence`: dual-bookkeeping checks of the MCMC acceptance ratio and
//!   SMC incremental weight, plus a cross-sampler moment table.
//! * `mcwm-bias`: fresh-denominator against carried-bundle chains over a
//!   grid of S, scored by KS distance to the oracle.
//! * `s-invariance`: two-sample KS tests between sampler outputs at
//!   different S.
//!
//! All experiments assume a scalar parameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    bootstrap_ci, ks_statistic, ks_two_sample, ols_slope, replicate_mean_se, weighted_moments,
    WeightedSamples,
};
use crate::equivalence::{check_mcmc, check_smc, EquivalenceCheck};
use crate::error::{LfsError, Result};
use crate::harness::config::{RunConfig, SmcVariantName};
use crate::harness::output::{to_json, Artifacts, Cell, CsvTable, Provenance};
use crate::harness::runs::Problem;
use crate::mcmc::{run_chains, run_mcmc, McmcConfig, McmcVariant};
use crate::model::ParamVector;
use crate::rejection::{run_rejection, RejectionConfig};
use crate::smc::{run_smc, BandwidthSchedule};
use crate::{SeedStreams, StreamTag};

/// Seed-space indices of the experiments' parts.
const EQUIVALENCE: u64 = 1;
const CROSS: u64 = 2;
const MCWM: u64 = 3;
const INVARIANCE: u64 = 4;
const CONTROL: u64 = 5;
const BOOTSTRAP: u64 = 6;

fn scalar_problem(config: &RunConfig) -> Result<Problem> {
    let problem = Problem::from_config(config)?;
    if problem.model.param_dim() != 1 {
        return Err(LfsError::config(
            "experiments need a model with a scalar parameter",
        ));
    }
    Ok(problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRow {
    pub sampler: String,
    pub s: usize,
    #[serde(flatten)]
    pub check: EquivalenceCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub sampler: String,
    pub s: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub s: usize,
    pub a: String,
    pub b: String,
    pub moment: String,
    pub difference: f64,
    pub combined_se: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub discrepancies: Vec<DiscrepancyRow>,
    pub max_abs_discrepancy: f64,
    pub oracle_mean: Option<f64>,
    pub oracle_variance: Option<f64>,
    pub moments: Vec<MomentRow>,
    pub pair_checks: Vec<PairCheck>,
    pub passed: bool,
    pub provenance: Provenance,
}

pub const CROSS_SAMPLERS: [&str; 4] = ["reject", "mcmc-carried", "smc-joint", "smc-backward"];

/// Mean and variance of one replicate of one sampler.
fn replicate_moments(
    sampler: &str,
    s: usize,
    config: &RunConfig,
    problem: &Problem,
    streams: &SeedStreams,
) -> Result<(f64, f64)> {
    let e = &config.experiment;
    let model = problem.model.as_ref();
    let (kernel, t_y) = (&problem.kernel, problem.t_y.as_slice());
    let samples = match sampler {
        "reject" => {
            let cfg = RejectionConfig {
                s,
                n_accept: e.cross_samples,
                ..config.rejection()
            };
            WeightedSamples::unweighted(
                &run_rejection(model, kernel, t_y, &cfg, streams)?.thetas(),
            )?
        }
        "mcmc-carried" => {
            let burn_in = e.cross_samples * e.cross_mcmc_thin / 10;
            let cfg = McmcConfig {
                s,
                variant: McmcVariant::CarriedBundle,
                n_iter: burn_in + e.cross_samples * e.cross_mcmc_thin,
                burn_in: Some(burn_in),
                thin: e.cross_mcmc_thin,
                ..config.mcmc_config(model)?
            };
            let mut rng = streams.stream(StreamTag::Mcmc, 0, 0);
            WeightedSamples::unweighted(&run_mcmc(model, kernel, t_y, &cfg, &mut rng)?.thetas())?
        }
        "smc-joint" | "smc-backward" => {
            let mut c = config.clone();
            c.s = s;
            c.smc.n_particles = e.cross_samples;
            c.smc.variant = if sampler == "smc-joint" {
                SmcVariantName::JointMcmcMove
            } else {
                SmcVariantName::BackwardKernel
            };
            if sampler == "smc-joint" {
                c.smc.reject_threshold = None;
            }
            let cfg = c.smc_config(model)?;
            let out = run_smc(model, kernel, t_y, &cfg, streams)?;
            WeightedSamples::weighted(&out.thetas, &out.weights)?
        }
        other => unreachable!("unknown sampler {other}"),
    };
    let (m, v) = weighted_moments(&samples);
    Ok((m[0], v[0]))
}

pub fn equivalence(config: &RunConfig) -> Result<(Artifacts, EquivalenceReport)> {
    let problem = scalar_problem(config)?;
    let model = problem.model.as_ref();
    let (kernel, t_y) = (&problem.kernel, problem.t_y.as_slice());
    let e = &config.experiment;
    let root = SeedStreams::new(config.seed);

    let mut discrepancies = Vec::new();
    for &s in &e.cross_s {
        for variant in [McmcVariant::CarriedBundle, McmcVariant::FreshDenominator] {
            let cfg = McmcConfig {
                s,
                variant,
                n_iter: e.equivalence_iterations,
                burn_in: Some(0),
                thin: 1,
                ..config.mcmc_config(model)?
            };
            let mut rng =
                root.child(EQUIVALENCE)
                    .stream(StreamTag::Experiment, variant as u64, s as u64);
            let check = check_mcmc(model, kernel, t_y, &cfg, &mut rng)?;
            discrepancies.push(DiscrepancyRow {
                sampler: format!("mcmc-{}", variant_name(variant)),
                s,
                check,
            });
        }
        let mut smc = config.smc_config(model)?;
        smc.s = s;
        smc.variant = crate::smc::SmcVariant::JointMcmcMove;
        let reweight_steps = smc.schedule.bandwidths()?.len().saturating_sub(1).max(1);
        smc.n_particles = e.equivalence_iterations.div_ceil(reweight_steps).max(2);
        if let BandwidthSchedule::Geometric { n_steps, .. } = &mut smc.schedule {
            *n_steps = (*n_steps).max(2);
        }
        let check = check_smc(
            model,
            kernel,
            t_y,
            &smc,
            &root.child(EQUIVALENCE).child(s as u64),
        )?;
        discrepancies.push(DiscrepancyRow {
            sampler: "smc-joint".into(),
            s,
            check,
        });
    }
    let max_abs_discrepancy = discrepancies
        .iter()
        .map(|d| d.check.max_abs_discrepancy)
        .fold(0.0, f64::max);
    let identical = discrepancies.iter().all(|d| d.check.bit_identical);

    let mut moments = Vec::new();
    for (si, &s) in e.cross_s.iter().enumerate() {
        for (k, sampler) in CROSS_SAMPLERS.iter().enumerate() {
            let base = root.child(CROSS).child(si as u64).child(k as u64);
            let reps: Vec<(f64, f64)> = (0..e.cross_replicates as u64)
                .into_par_iter()
                .map(|r| replicate_moments(sampler, s, config, &problem, &base.child(r)))
                .collect::<Result<_>>()?;
            let (mean, mean_se) = replicate_mean_se(&reps.iter().map(|r| r.0).collect::<Vec<_>>());
            let (variance, variance_se) =
                replicate_mean_se(&reps.iter().map(|r| r.1).collect::<Vec<_>>());
            moments.push(MomentRow {
                sampler: sampler.to_string(),
                s,
                mean,
                mean_se,
                variance,
                variance_se,
            });
        }
    }
    let mut pair_checks = Vec::new();
    for &s in &e.cross_s {
        let rows: Vec<&MomentRow> = moments.iter().filter(|m| m.s == s).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let (a, b) = (rows[i], rows[j]);
                for (moment, da, sa, db, sb) in [
                    ("mean", a.mean, a.mean_se, b.mean, b.mean_se),
                    (
                        "variance",
                        a.variance,
                        a.variance_se,
                        b.variance,
                        b.variance_se,
                    ),
                ] {
                    let difference = da - db;
                    let combined_se = sa.hypot(sb);
                    pair_checks.push(PairCheck {
                        s,
                        a: a.sampler.clone(),
                        b: b.sampler.clone(),
                        moment: moment.into(),
                        difference,
                        combined_se,
                        passed: difference.abs() <= e.cross_se_multiple * combined_se,
                    });
                }
            }
        }
    }
    let oracle = model.oracle(t_y, kernel).ok();
    let report = EquivalenceReport {
        passed: identical && max_abs_discrepancy == 0.0 && pair_checks.iter().all(|p| p.passed),
        discrepancies,
        max_abs_discrepancy,
        oracle_mean: oracle.as_ref().map(|o| o.mean()),
        oracle_variance: oracle.as_ref().map(|o| o.variance()),
        moments,
        pair_checks,
        provenance: Provenance::of(config),
    };

    let mut table = CsvTable::new(
        config,
        &["sampler", "s", "mean", "mean_se", "variance", "variance_se"].map(String::from),
    );
    for m in &report.moments {
        table.row(&[
            Cell::S(&m.sampler),
            Cell::U(m.s as u64),
            Cell::F(m.mean),
            Cell::F(m.mean_se),
            Cell::F(m.variance),
            Cell::F(m.variance_se),
        ]);
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("csv", table.finish());
    artifacts.add("json", to_json(&report));
    Ok((artifacts, report))
}

fn variant_name(v: McmcVariant) -> &'static str {
    match v {
        McmcVariant::CarriedBundle => "carried",
        McmcVariant::FreshDenominator => "fresh",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub variant: String,
    pub s: usize,
    pub ks: Vec<f64>,
    pub mean_ks: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McwmReport {
    pub rows: Vec<BiasRow>,
    /// Fresh-denominator mean KS at the smallest S minus at the largest.
    pub fresh_difference: Interval,
    /// Fresh-denominator mean KS is non-increasing along the S grid.
    pub fresh_monotone: bool,
    /// Carried-bundle slope of mean KS against `ln S`.
    pub carried_slope: Interval,
    /// Larger over smaller mean KS of the two variants at the largest S.
    pub large_s_ratio: f64,
    pub fresh_biased: bool,
    pub carried_flat: bool,
    pub large_s_agree: bool,
    pub passed: bool,
    pub provenance: Provenance,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn mcwm_bias(config: &RunConfig) -> Result<(Artifacts, McwmReport)> {
    let problem = scalar_problem(config)?;
    let model = problem.model.as_ref();
    let (kernel, t_y) = (&problem.kernel, problem.t_y.as_slice());
    let e = &config.experiment;
    let oracle = model.oracle(t_y, kernel)?;
    let cdf = |x: f64| oracle.cdf(x);
    let root = SeedStreams::new(config.seed).child(MCWM);

    let mut rows = Vec::new();
    for variant in [McmcVariant::FreshDenominator, McmcVariant::CarriedBundle] {
        for &s in &e.mcwm_s {
            let cfg = McmcConfig {
                s,
                variant,
                n_iter: e.mcwm_iterations,
                burn_in: None,
                thin: e.mcwm_thin,
                ..config.mcmc_config(model)?
            };
            let chains = run_chains(
                model,
                kernel,
                t_y,
                &cfg,
                e.mcwm_chains,
                &root.child(variant as u64).child(s as u64),
            )?;
            let ks = chains
                .iter()
                .map(|c| ks_statistic(&WeightedSamples::unweighted(&c.thetas())?, &[&cdf]))
                .collect::<Result<Vec<f64>>>()?;
            let acceptance_rate = mean(
                &chains
                    .iter()
                    .map(|c| c.acceptance_rate())
                    .collect::<Vec<_>>(),
            );
            rows.push(BiasRow {
                variant: variant_name(variant).into(),
                s,
                mean_ks: mean(&ks),
                ks,
                acceptance_rate,
            });
        }
    }
    let fresh: Vec<&BiasRow> = rows.iter().filter(|r| r.variant == "fresh").collect();
    let carried: Vec<&BiasRow> = rows.iter().filter(|r| r.variant == "carried").collect();
    let (first, last) = (0, fresh.len() - 1);

    let mut rng =
        SeedStreams::new(config.seed)
            .child(BOOTSTRAP)
            .stream(StreamTag::Diagnostics, 0, 0);
    let pair = [fresh[first].ks.clone(), fresh[last].ks.clone()];
    let diff = |g: &[Vec<f64>]| mean(&g[0]) - mean(&g[1]);
    let (lower, upper) = bootstrap_ci(
        &pair,
        &diff,
        e.bootstrap_resamples,
        e.bootstrap_level,
        &mut rng,
    );
    let fresh_difference = Interval {
        estimate: diff(&pair),
        lower,
        upper,
    };

    let log_s: Vec<f64> = carried.iter().map(|r| (r.s as f64).ln()).collect();
    let groups: Vec<Vec<f64>> = carried.iter().map(|r| r.ks.clone()).collect();
    let slope = |g: &[Vec<f64>]| ols_slope(&log_s, &g.iter().map(|x| mean(x)).collect::<Vec<_>>());
    let carried_slope = if groups.len() >= 2 {
        let (lower, upper) = bootstrap_ci(
            &groups,
            &slope,
            e.bootstrap_resamples,
            e.bootstrap_level,
            &mut rng,
        );
        Interval {
            estimate: slope(&groups),
            lower,
            upper,
        }
    } else {
        Interval {
            estimate: 0.0,
            lower: 0.0,
            upper: 0.0,
        }
    };

    let (a, b) = (fresh[last].mean_ks, carried[last].mean_ks);
    let large_s_ratio = a.max(b) / a.min(b);
    let fresh_biased = fresh[first].mean_ks > fresh[last].mean_ks && fresh_difference.lower > 0.0;
    let carried_flat = carried_slope.contains(0.0);
    let large_s_agree = large_s_ratio <= e.large_s_ratio;
    let report = McwmReport {
        fresh_monotone: fresh.windows(2).all(|w| w[1].mean_ks <= w[0].mean_ks),
        rows,
        fresh_difference,
        carried_slope,
        large_s_ratio,
        fresh_biased,
        carried_flat,
        large_s_agree,
        passed: fresh_biased && carried_flat && large_s_agree,
        provenance: Provenance::of(config),
    };

    let mut table = CsvTable::new(config, &["variant", "s", "chain", "ks"].map(String::from));
    for r in &report.rows {
        for (c, ks) in r.ks.iter().enumerate() {
            table.row(&[
                Cell::S(&r.variant),
                Cell::U(r.s as u64),
                Cell::U(c as u64),
                Cell::F(*ks),
            ]);
        }
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("csv", table.finish());
    artifacts.add("json", to_json(&report));
    Ok((artifacts, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub sampler: String,
    pub s: usize,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub sampler: String,
    pub s_a: usize,
    pub s_b: usize,
    /// Distinguishes the same-S control pair run on a second seed.
    pub control: bool,
    pub statistic: f64,
    pub permutation_p: f64,
    pub asymptotic_p: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub populations: Vec<Population>,
    pub tests: Vec<PairTest>,
    pub passed: bool,
    pub provenance: Provenance,
}

fn invariance_population(
    sampler: &str,
    s: usize,
    config: &RunConfig,
    problem: &Problem,
    streams: &SeedStreams,
) -> Result<(Vec<f64>, f64)> {
    let e = &config.experiment;
    let model = problem.model.as_ref();
    let (kernel, t_y) = (&problem.kernel, problem.t_y.as_slice());
    match sampler {
        "reject" => {
            let cfg = RejectionConfig {
                s,
                n_accept: e.invariance_samples,
                ..config.rejection()
            };
            let out = run_rejection(model, kernel, t_y, &cfg, streams)?;
            Ok((
                out.accepted.iter().map(|a| a.theta[0]).collect(),
                out.acceptance_rate,
            ))
        }
        _ => {
            let per_chain = e.invariance_samples.div_ceil(e.invariance_chains);
            let burn_in = per_chain * e.invariance_thin / 10;
            let cfg = McmcConfig {
                s,
                variant: McmcVariant::CarriedBundle,
                n_iter: burn_in + per_chain * e.invariance_thin,
                burn_in: Some(burn_in),
                thin: e.invariance_thin,
                ..config.mcmc_config(model)?
            };
            let chains = run_chains(model, kernel, t_y, &cfg, e.invariance_chains, streams)?;
            let mut xs: Vec<f64> = chains
                .iter()
                .flat_map(|c| c.records.iter().map(|r| r.theta[0]))
                .collect();
            xs.truncate(e.invariance_samples);
            let acc = mean(
                &chains
                    .iter()
                    .map(|c| c.acceptance_rate())
                    .collect::<Vec<_>>(),
            );
            Ok((xs, acc))
        }
    }
}

/// (S of a, S of b, a, b, is control)
type SamplePair<'a> = (usize, usize, &'a [f64], &'a [f64], bool);

pub fn s_invariance(config: &RunConfig) -> Result<(Artifacts, InvarianceReport)> {
    let problem = scalar_problem(config)?;
    let e = &config.experiment;
    let root = SeedStreams::new(config.seed);
    let samplers = ["reject", "mcmc-carried"];

    let mut populations = Vec::new();
    let mut tests = Vec::new();
    for (k, sampler) in samplers.iter().enumerate() {
        let mut draws = Vec::new();
        for (si, &s) in e.invariance_s.iter().enumerate() {
            let streams = root.child(INVARIANCE).child(k as u64).child(si as u64);
            let (xs, acceptance_rate) =
                invariance_population(sampler, s, config, &problem, &streams)?;
            let rows: Vec<ParamVector> = xs.iter().map(|&x| ParamVector::new(vec![x])).collect();
            let (m, v) = weighted_moments(&WeightedSamples::unweighted(&rows)?);
            populations.push(Population {
                sampler: sampler.to_string(),
                s,
                n: xs.len(),
                mean: m[0],
                variance: v[0],
                acceptance_rate,
            });
            draws.push((s, xs));
        }
        let control_streams = root.child(CONTROL).child(k as u64);
        let (control, _) =
            invariance_population(sampler, draws[0].0, config, &problem, &control_streams)?;

        let mut pairs: Vec<SamplePair> = Vec::new();
        for i in 0..draws.len() {
            for j in i + 1..draws.len() {
                pairs.push((draws[i].0, draws[j].0, &draws[i].1, &draws[j].1, false));
            }
        }
        pairs.push((draws[0].0, draws[0].0, &draws[0].1, &control, true));
        for (t, (s_a, s_b, a, b, is_control)) in pairs.into_iter().enumerate() {
            let perm_streams = root.child(INVARIANCE).child(100 + k as u64).child(t as u64);
            let ks = ks_two_sample(a, b, e.permutations, &perm_streams)?;
            let permutation_p = ks.permutation_p.unwrap_or(ks.asymptotic_p);
            tests.push(PairTest {
                sampler: sampler.to_string(),
                s_a,
                s_b,
                control: is_control,
                statistic: ks.statistic,
                permutation_p,
                asymptotic_p: ks.asymptotic_p,
                passed: permutation_p > e.significance,
            });
        }
    }
    let report = InvarianceReport {
        passed: tests.iter().all(|t| t.passed),
        populations,
        tests,
        provenance: Provenance::of(config),
    };

    let header = [
        "sampler",
        "s_a",
        "s_b",
        "control",
        "statistic",
        "permutation_p",
        "asymptotic_p",
        "passed",
    ];
    let mut table = CsvTable::new(config, &header.map(String::from));
    for t in &report.tests {
        table.row(&[
            Cell::S(&t.sampler),
            Cell::U(t.s_a as u64),
            Cell::U(t.s_b as u64),
            Cell::B(t.control),
            Cell::F(t.statistic),
            Cell::F(t.permutation_p),
            Cell::F(t.asymptotic_p),
            Cell::B(t.passed),
        ]);
    }
    let mut artifacts = Artifacts::default();
    artifacts.add("csv", table.finish());
    artifacts.add("json", to_json(&report));
    Ok((artifacts, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> RunConfig {
        let mut c = RunConfig::default();
        let e = &mut c.experiment;
        e.equivalence_iterations = 500;
        e.cross_replicates = 4;
        e.cross_samples = 300;
        e.mcwm_s = vec![1, 4];
        e.mcwm_chains = 3;
        e.mcwm_iterations = 4000;
        e.mcwm_thin = 4;
        e.bootstrap_resamples = 200;
        e.invariance_s = vec![1, 3];
        e.invariance_samples = 500;
        e.invariance_chains = 2;
        e.invariance_thin = 4;
        e.permutations = 99;
        c.smc.steps = 4;
        c
    }

    #[test]
    fn equivalence_report_round_trips() {
        let (art, report) = equivalence(&quick()).unwrap();
        assert_eq!(report.max_abs_discrepancy, 0.0);
        assert!(report
            .discrepancies
            .iter()
            .all(|d| d.check.bit_identical && d.check.compared > 0));
        assert_eq!(report.moments.len(), 2 * CROSS_SAMPLERS.len());
        assert_eq!(report.pair_checks.len(), 2 * 6 * 2);
        let back: EquivalenceReport = serde_json::from_str(art.get("json").unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn mcwm_report_shape() {
        let (art, report) = mcwm_bias(&quick()).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.ks.len() == 3));
        let back: McwmReport = serde_json::from_str(art.get("json").unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn invariance_report_shape() {
        let (art, report) = s_invariance(&quick()).unwrap();
        assert_eq!(report.populations.len(), 4);
        assert!(report.populations.iter().all(|p| p.n == 500));
        // one S pair and one control per sampler
        assert_eq!(report.tests.len(), 4);
        let back: InvarianceReport = serde_json::from_str(art.get("json").unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn vector_parameters_are_refused() {
        let mut c = quick();
        c.s = 0;
        assert!(matches!(s_invariance(&c), Err(LfsError::Config(_))));
    }
}
