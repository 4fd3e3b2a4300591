use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use straggler_sim::experiment::{self, LoadedConfig};
use straggler_sim::metrics::F1Mode;
use straggler_sim::mitigation::PolicyId;
use straggler_sim::sim::workload;

/// Cloud cluster simulator with straggler prediction and mitigation.
///
/// Log verbosity comes from STRAGGLER_SIM_LOG (error, warn, info, debug,
/// trace; default warn).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the F1 formula exactly as printed, tp / (tp + (fp + tp) / 2).
    #[arg(long)]
    f1_as_printed: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic workload trace.
    Generate(Common),
    /// Harvest training windows and train the predictor.
    Train {
        #[command(flatten)]
        common: Common,
        /// Trace CSV to harvest from; generated when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Run one policy and write its report.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PolicyId>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run several policies on the same workload and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated; all policies when omitted.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<PolicyId>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recompute a stored report's aggregates from its series.
    Evaluate {
        report: PathBuf,
        /// Series CSV to use instead of the series inside the report.
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(LoadedConfig, PathBuf)> {
    let mut loaded = match &common.config {
        Some(path) => LoadedConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => LoadedConfig::defaults(),
    };
    let cfg = &mut loaded.config;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.f1_as_printed {
        cfg.report.f1_mode = F1Mode::AsPrinted;
        cfg.policies.start.f1_mode = F1Mode::AsPrinted;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((loaded, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let (loaded, out) = load(&common)?;
            let rows = experiment::cmd_generate(&loaded, &out)?;
            println!("{} tasks -> {}", rows.len(), out.join("trace.csv").display());
        }
        Command::Train {
            common,
            trace,
            checkpoint,
            epochs,
            lr,
        } => {
            let (mut loaded, out) = load(&common)?;
            if let Some(e) = epochs {
                loaded.config.training.epochs = e;
            }
            if let Some(lr) = lr {
                loaded.config.training.lr = lr;
            }
            loaded.config.validate()?;
            let rows = match trace {
                Some(path) => workload::read_trace(&path)?,
                None => experiment::load_trace(&loaded.config)?,
            };
            let summary = experiment::cmd_train(&loaded, &rows, &out, checkpoint.as_deref())?;
            let last = summary.curve.last().map(|p| p.train_mse);
            println!(
                "{} examples, final train mse {last:?} -> {}",
                summary.examples,
                summary.checkpoint.display()
            );
        }
        Command::Simulate {
            common,
            policy,
            checkpoint,
        } => {
            let (mut loaded, out) = load(&common)?;
            if let Some(p) = policy {
                loaded.config.policy = p;
            }
            let sim = experiment::cmd_simulate(&loaded, &out, checkpoint.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&sim.report.aggregates)?);
        }
        Command::Compare {
            common,
            policy,
            checkpoint,
        } => {
            let (loaded, out) = load(&common)?;
            let policies = if policy.is_empty() { PolicyId::ALL.to_vec() } else { policy };
            let rows = experiment::cmd_compare(&loaded, &policies, &out, checkpoint.as_deref())?;
            for r in &rows {
                println!(
                    "{:<10} jobs {:>5} mean completion {:>10.1?} sla {:>6.3?} energy {:.4e}",
                    r.policy, r.jobs_completed, r.mean_job_completion, r.sla_violation_rate, r.energy_total
                );
            }
            println!("table -> {}", out.join("compare.csv").display());
        }
        Command::Evaluate { report, series } => {
            let agg = experiment::cmd_evaluate(&report, series.as_deref())?;
            println!("consistent: {}", serde_json::to_string(&agg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STRAGGLER_SIM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
