//! `lfs`: likelihood-free rejection, MCMC and SMC sampling from the command
//! line.
//!
//! Every command reads an optional TOML configuration, applies flag
//! overrides, runs, and writes `<prefix>.csv` and `<prefix>.json` into the
//! output directory. Exit codes: 0 success, 1 statistical failure,
//! 2 configuration error, 3 budget exhaustion.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lfs_core::harness::config::{ModelName, ProposalKind, SmcVariantName, OUT_DIR_ENV};
use lfs_core::harness::{experiments, runs, Artifacts, ExitStatus, RunConfig};
use lfs_core::mcmc::McmcVariant;
use lfs_core::{KernelKind, LfsError};

#[derive(Parser, Debug)]
#[command(
    name = "lfs",
    version,
    about = "Likelihood-free samplers over S auxiliary datasets"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration, or a CSV/JSON output whose embedded configuration is reused.
    #[arg(long, global = true, env = "LFS_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (does not affect results).
    #[arg(long, global = true, env = "LFS_WORKERS")]
    workers: Option<usize>,
    /// Output directory [default: $LFS_OUT_DIR, then the working directory].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output file stem [default: the command name].
    #[arg(long, global = true)]
    prefix: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    /// Observed summaries, comma separated.
    #[arg(
        long = "t-y",
        global = true,
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    t_y: Option<Vec<f64>>,
    /// Trials of the bernoulli-count model.
    #[arg(long, global = true)]
    trials: Option<u64>,
    #[arg(long, global = true, value_enum)]
    kernel: Option<KernelArg>,
    /// Kernel bandwidth.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Auxiliary datasets per parameter value.
    #[arg(long, global = true)]
    s: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rejection sampling.
    Reject(RejectArgs),
    /// Carried-bundle or fresh-denominator MCMC.
    Mcmc(McmcArgs),
    /// SMC over a decreasing bandwidth schedule.
    Smc(SmcArgs),
    /// One of the headline experiments.
    Experiment {
        #[arg(value_enum)]
        which: ExperimentArg,
    },
    /// Parse and check a configuration, then print it with defaults filled in.
    ValidateConfig,
}

#[derive(Args, Debug)]
struct RejectArgs {
    #[arg(long)]
    n_accept: Option<usize>,
    #[arg(long)]
    budget: Option<u64>,
    /// Also write the accepted auxiliary bundles to `<prefix>.bundles.csv`.
    #[arg(long)]
    emit_bundles: bool,
}

#[derive(Args, Debug)]
struct McmcArgs {
    #[arg(long, value_enum)]
    variant: Option<McmcVariantArg>,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long, value_enum)]
    proposal: Option<ProposalArg>,
    #[arg(long)]
    step_sd: Option<f64>,
}

#[derive(Args, Debug)]
struct SmcArgs {
    #[arg(long, value_enum)]
    variant: Option<SmcVariantArg>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    h_start: Option<f64>,
    #[arg(long)]
    h_end: Option<f64>,
    /// Number of bandwidths in the geometric schedule.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    ess_threshold: Option<f64>,
    /// Dropping threshold of the backward-kernel variant, in (0, 1).
    #[arg(long)]
    reject_threshold: Option<f64>,
    #[arg(long)]
    step_sd: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModelArg {
    NormalMean,
    BernoulliCount,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum KernelArg {
    Uniform,
    Epanechnikov,
    Gaussian,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum McmcVariantArg {
    Carried,
    Fresh,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SmcVariantArg {
    Joint,
    Backward,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProposalArg {
    RandomWalk,
    Independence,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ExperimentArg {
    Equivalence,
    McwmBias,
    SInvariance,
}

fn apply_common(c: &mut RunConfig, a: &Common) {
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.model {
        c.model.name = match v {
            ModelArg::NormalMean => ModelName::NormalMean,
            ModelArg::BernoulliCount => ModelName::BernoulliCount,
        };
    }
    if let Some(v) = &a.t_y {
        c.model.t_y = v.clone();
    }
    if let Some(v) = a.trials {
        c.model.trials = v;
    }
    if let Some(v) = a.kernel {
        c.kernel.kind = match v {
            KernelArg::Uniform => KernelKind::Uniform,
            KernelArg::Epanechnikov => KernelKind::Epanechnikov,
            KernelArg::Gaussian => KernelKind::Gaussian,
        };
    }
    if let Some(v) = a.h {
        c.kernel.h = v;
    }
    if let Some(v) = a.s {
        c.s = v;
    }
    if let Some(v) = &a.out {
        c.output.dir = Some(v.clone());
    }
    if let Some(v) = &a.prefix {
        c.output.prefix = Some(v.clone());
    }
}

fn proposal_kind(p: ProposalArg) -> ProposalKind {
    match p {
        ProposalArg::RandomWalk => ProposalKind::RandomWalk,
        ProposalArg::Independence => ProposalKind::Independence,
    }
}

fn apply_command(c: &mut RunConfig, command: &Command) {
    match command {
        Command::Reject(a) => {
            if let Some(v) = a.n_accept {
                c.reject.n_accept = v;
            }
            if let Some(v) = a.budget {
                c.reject.budget = v;
            }
            if a.emit_bundles {
                c.reject.emit_bundles = true;
            }
        }
        Command::Mcmc(a) => {
            if let Some(v) = a.variant {
                c.mcmc.variant = match v {
                    McmcVariantArg::Carried => McmcVariant::CarriedBundle,
                    McmcVariantArg::Fresh => McmcVariant::FreshDenominator,
                };
            }
            if let Some(v) = a.n_iter {
                c.mcmc.n_iter = v;
            }
            if a.burn_in.is_some() {
                c.mcmc.burn_in = a.burn_in;
            }
            if let Some(v) = a.thin {
                c.mcmc.thin = v;
            }
            if let Some(v) = a.chains {
                c.mcmc.chains = v;
            }
            if let Some(v) = a.proposal {
                c.mcmc.proposal = proposal_kind(v);
            }
            if a.step_sd.is_some() {
                c.mcmc.step_sd = a.step_sd;
            }
        }
        Command::Smc(a) => {
            if let Some(v) = a.variant {
                c.smc.variant = match v {
                    SmcVariantArg::Joint => SmcVariantName::JointMcmcMove,
                    SmcVariantArg::Backward => SmcVariantName::BackwardKernel,
                };
            }
            if let Some(v) = a.particles {
                c.smc.n_particles = v;
            }
            if let Some(v) = a.h_start {
                c.smc.h_start = v;
            }
            if a.h_end.is_some() {
                c.smc.h_end = a.h_end;
            }
            if let Some(v) = a.steps {
                c.smc.steps = v;
            }
            if let Some(v) = a.ess_threshold {
                c.smc.ess_threshold = v;
            }
            if a.reject_threshold.is_some() {
                c.smc.reject_threshold = a.reject_threshold;
            }
            if a.step_sd.is_some() {
                c.smc.step_sd = a.step_sd;
            }
        }
        Command::Experiment { .. } | Command::ValidateConfig => {}
    }
}

fn emit(config: &RunConfig, command: &str, artifacts: &Artifacts) -> Result<(), LfsError> {
    for path in artifacts.write(&config.out_dir(), &config.prefix(command))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitStatus, LfsError> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_common(&mut config, &cli.common);
    apply_command(&mut config, &cli.command);
    config.validate()?;

    let verdict = |passed: bool| {
        if passed {
            ExitStatus::Success
        } else {
            ExitStatus::StatisticalFailure
        }
    };
    match &cli.command {
        Command::Reject(_) => {
            let (art, summary) = runs::reject(&config)?;
            emit(&config, "reject", &art)?;
            let d = &summary.diagnostics;
            println!(
                "accepted {} of {} proposals; mean {:?}, variance {:?}",
                d.n_samples,
                d.proposals_used.unwrap_or(0),
                d.mean,
                d.variance
            );
            Ok(ExitStatus::Success)
        }
        Command::Mcmc(_) => {
            let (art, summary) = runs::mcmc(&config)?;
            emit(&config, "mcmc", &art)?;
            let d = &summary.diagnostics;
            println!(
                "{} ({}): acceptance {:.3}; mean {:?}, variance {:?}",
                config.mcmc.variant.label(),
                d.n_samples,
                d.acceptance_rate.unwrap_or(f64::NAN),
                d.mean,
                d.variance
            );
            Ok(ExitStatus::Success)
        }
        Command::Smc(_) => {
            let (art, summary) = runs::smc(&config)?;
            emit(&config, "smc", &art)?;
            let d = &summary.diagnostics;
            println!(
                "final ESS {:.1}; mean {:?}, variance {:?}",
                d.ess_trace.last().unwrap_or(&f64::NAN),
                d.mean,
                d.variance
            );
            Ok(ExitStatus::Success)
        }
        Command::Experiment { which } => match which {
            ExperimentArg::Equivalence => {
                let (art, report) = experiments::equivalence(&config)?;
                emit(&config, "equivalence", &art)?;
                println!(
                    "max discrepancy {}; cross-sampler checks passed: {}",
                    report.max_abs_discrepancy, report.passed
                );
                for d in report
                    .discrepancies
                    .iter()
                    .filter(|d| !d.check.bit_identical)
                {
                    println!(
                        "mismatch: {} S={} first at {:?}",
                        d.sampler, d.s, d.check.first_mismatch
                    );
                }
                Ok(verdict(report.passed))
            }
            ExperimentArg::McwmBias => {
                let (art, report) = experiments::mcwm_bias(&config)?;
                emit(&config, "mcwm-bias", &art)?;
                for r in &report.rows {
                    println!("{:>8} S={:<4} mean KS {:.4}", r.variant, r.s, r.mean_ks);
                }
                println!(
                    "fresh biased: {}; carried flat: {}; large-S agreement: {}",
                    report.fresh_biased, report.carried_flat, report.large_s_agree
                );
                Ok(verdict(report.passed))
            }
            ExperimentArg::SInvariance => {
                let (art, report) = experiments::s_invariance(&config)?;
                emit(&config, "s-invariance", &art)?;
                for t in &report.tests {
                    println!(
                        "{:>12} S={} vs S={}: p = {:.3}",
                        t.sampler, t.s_a, t.s_b, t.permutation_p
                    );
                }
                Ok(verdict(report.passed))
            }
        },
        Command::ValidateConfig => {
            print!("{}", config.to_toml());
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if let Some(n) = cli.common.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(ExitStatus::ConfigError.code() as u8);
        }
    }
    let status = run(&cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        if std::env::var_os(OUT_DIR_ENV).is_none() && matches!(e, LfsError::Io(_)) {
            eprintln!("hint: set --out or ${OUT_DIR_ENV} to choose the output directory");
        }
        ExitStatus::of_error(&e)
    });
    ExitCode::from(status.code() as u8)
}
