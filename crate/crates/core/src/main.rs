//! `sila` — experiment CLI.
//!
//! Subcommands cover the full pipeline: data generation, pair and
//! multi-exit training, anytime/budgeted evaluation of saved checkpoints,
//! the parameter-noise robustness probe, and penultimate-feature dumps.
//! Every run is driven by a JSON config file; the flags below override the
//! corresponding config fields. On failure the process exits nonzero after
//! printing one `error[<category>]: ...` line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sila_core::dynamic_eval::{evaluate_anytime, evaluate_budgeted, BudgetProfile};
use sila_core::error::{Result, SilaError};
use sila_core::experiments::{
    run_feature_experiment, run_gen_data, run_multi_exit, run_pair_ab,
    run_robustness_experiment, ExperimentConfig,
};
use sila_core::models::{Arch, ParameterSet};

#[derive(Parser)]
#[command(
    name = "sila",
    about = "Siamese-label auxiliary training experiments",
    version
)]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed list (overrides the config's `seeds`).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Experiment kind override (pair_ab, multi_exit, robustness_probe,
    /// feature_dump).
    #[arg(long, global = true)]
    experiment: Option<String>,

    /// Budget list for the dynamic protocols (overrides `budgets`).
    #[arg(long, global = true, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured train/validation/test splits as CSV.
    GenData,
    /// Train a pair of networks under every arm and summarize.
    TrainPair,
    /// Train the multi-exit chain (both arms) and emit evaluation curves.
    TrainDynamic,
    /// Evaluate a saved multi-exit checkpoint under the anytime protocol.
    EvalAnytime,
    /// Calibrate and evaluate a saved checkpoint under per-batch budgets.
    EvalBudgeted,
    /// Measure training-NLL change under parameter noise.
    ProbeRobustness,
    /// Dump penultimate-layer features for plotting.
    DumpFeatures,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| SilaError::Config("--config <file.json> is required".into()))?;
    let mut config = ExperimentConfig::from_json_file(path)?;
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seeds) = &cli.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(kind) = &cli.experiment {
        config.experiment = serde_json::from_value(serde_json::Value::String(kind.clone()))?;
    }
    if let Some(budgets) = &cli.budgets {
        config.budgets = Some(budgets.clone());
    }
    config.validate()?;
    Ok(config)
}

fn checkpoint_params(config: &ExperimentConfig) -> Result<ParameterSet> {
    let path = config
        .checkpoint
        .as_ref()
        .ok_or_else(|| SilaError::Config("config needs a `checkpoint` path".into()))?;
    ParameterSet::load(path)
}

fn eval_profile(params: &ParameterSet) -> Result<BudgetProfile> {
    match params.arch() {
        Arch::MultiExit(spec) => BudgetProfile::from_spec(spec),
        Arch::Mlp(_) => Err(SilaError::ArchMismatch {
            expected: "multi-exit",
        }),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match cli.command {
        Command::GenData => {
            let config = load_config(cli)?;
            run_gen_data(&config)?;
            println!("wrote splits under {}", config.out_dir.display());
        }
        Command::TrainPair => {
            let config = load_config(cli)?;
            let summary = run_pair_ab(&config)?;
            println!(
                "trained {} arm/net rows; summary at {}",
                summary.rows.len(),
                config.out_dir.join("summary.csv").display()
            );
        }
        Command::TrainDynamic => {
            let config = load_config(cli)?;
            run_multi_exit(&config)?;
            println!(
                "multi-exit curves and checkpoints under {}",
                config.out_dir.display()
            );
        }
        Command::EvalAnytime => {
            let config = load_config(cli)?;
            let params = checkpoint_params(&config)?;
            let profile = eval_profile(&params)?;
            let bundle = config.data.load()?;
            let budgets = config.budgets.clone().unwrap_or_else(|| {
                let (lo, hi) = (profile.min_cost(), profile.max_cost());
                (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
            });
            let curve = evaluate_anytime(&params, &bundle.test, &profile, &budgets)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("anytime.csv");
            curve.to_csv(&path)?;
            println!("anytime curve at {}", path.display());
        }
        Command::EvalBudgeted => {
            let config = load_config(cli)?;
            let params = checkpoint_params(&config)?;
            let profile = eval_profile(&params)?;
            let bundle = config.data.load()?;
            let budgets = config.budgets.clone().unwrap_or_else(|| {
                let (lo, hi) = (profile.min_cost(), profile.max_cost());
                (0..5).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
            });
            let curve =
                evaluate_budgeted(&params, &bundle.test, &bundle.validation, &profile, &budgets)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let path = config.out_dir.join("budgeted.csv");
            curve.to_csv(&path)?;
            println!("budgeted curve at {}", path.display());
        }
        Command::ProbeRobustness => {
            let config = load_config(cli)?;
            let reports = run_robustness_experiment(&config)?;
            for (arm, report) in &reports {
                println!(
                    "{}: base NLL {:.6}, largest mean delta {:.6}",
                    arm.as_str(),
                    report.base_nll,
                    report.entries.last().map(|e| e.1).unwrap_or(0.0)
                );
            }
        }
        Command::DumpFeatures => {
            let config = load_config(cli)?;
            let path = run_feature_experiment(&config)?;
            println!("features at {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::FAILURE
        }
    }
}
