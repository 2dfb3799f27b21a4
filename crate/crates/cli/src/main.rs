//! `uqbench` binary: train, evaluate, tune, shift, ablate, and report
//! subcommands over the benchmark harness.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use uqbench_cli::config::{preset, DatasetSpec, ExperimentConfig, ModelKind};
use uqbench_cli::data::DatasetName;
use uqbench_cli::runner::{self, AblationKind};
use uqbench_cli::{CliError, Result};
use uqbench_core::hpo::TuneOptions;
use uqbench_core::metrics::MetricReport;

#[derive(Parser)]
#[command(
    name = "uqbench",
    version,
    about = "Uncertainty benchmark harness: deep GPs, sigma point processes, and deep \
             ensembles with calibration and shift evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; write metrics, loss curve, and reliability CSV
    Train(RunArgs),
    /// Train from scratch and write test metrics only
    Evaluate(RunArgs),
    /// Bayesian-optimize hyperparameters against the validation split
    Tune(TuneArgs),
    /// Five independent runs evaluated under feature perturbations
    Shift(RunArgs),
    /// Sweep inducing-point count or stack depth for a GP model
    Ablate(AblateArgs),
    /// Summarize every run's metrics under an output directory
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Model family: dgp, dspp, or ensemble
    #[arg(long)]
    model: Option<String>,
    /// Dataset: casp, esr, synthetic, or synthetic-classification
    #[arg(long)]
    dataset: Option<String>,
    /// JSON experiment config used as the base
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (dgp-casp, dspp-esr, ...)
    #[arg(long)]
    preset: Option<String>,
    /// Master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory root
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Tuning trials; the first five are Sobol initialization points
    #[arg(long, default_value_t = 20)]
    trials: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Sweep axis: inducing or depth
    #[arg(long)]
    sweep: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory to summarize
    #[arg(long, default_value = "runs")]
    out: String,
}

/// Build the experiment config: base from `--config`, else `--preset`,
/// else `--model` plus `--dataset`; individual flags then override.
fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = if let Some(path) = &args.config {
        ExperimentConfig::from_json_file(path)?
    } else if let Some(name) = &args.preset {
        preset(name)?
    } else if let (Some(model), Some(dataset)) = (&args.model, &args.dataset) {
        ExperimentConfig::new(
            ModelKind::parse(model)?,
            DatasetSpec::named(DatasetName::parse(dataset)?),
        )
    } else {
        return Err(CliError::Config(
            "pass --config, --preset, or both --model and --dataset".into(),
        ));
    };
    if args.config.is_some() || args.preset.is_some() {
        if let Some(model) = &args.model {
            config.model = ModelKind::parse(model)?;
        }
        if let Some(dataset) = &args.dataset {
            config.dataset = DatasetSpec::named(DatasetName::parse(dataset)?);
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn print_report(report: &MetricReport) {
    println!("model {} on {} (seed {})", report.model, report.dataset, report.seed);
    println!("  nll    {:.6}", report.nll);
    if let Some(v) = report.ece {
        println!("  ece    {:.6}", v);
    }
    if let Some(v) = report.ce_reg {
        println!("  ce_reg {:.6}", v);
    }
    if let Some(v) = report.mae {
        println!("  mae    {:.6}", v);
    }
    if let Some(v) = report.accuracy {
        println!("  acc    {:.6}", v);
    }
}

fn short(v: &serde_json::Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => v.to_string(),
    }
}

fn print_summary_line(dir: &Path, value: &serde_json::Value) {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let report = &value["report"];
    let mut fields = vec![format!("nll {}", short(&report["nll"]))];
    for key in ["ece", "ce_reg", "mae", "accuracy"] {
        if !report[key].is_null() {
            fields.push(format!("{key} {}", short(&report[key])));
        }
    }
    println!("{name}: {}", fields.join(", "));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = resolve_config(&args)?;
            let artifacts = runner::run_experiment(&config)?;
            print_report(&artifacts.report);
            println!("artifacts written to {}", artifacts.out_dir.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let config = resolve_config(&args)?;
            let artifacts = runner::run_evaluation(&config)?;
            print_report(&artifacts.report);
            println!(
                "metrics written to {}",
                artifacts.out_dir.join("metrics.json").display()
            );
            Ok(())
        }
        Command::Tune(args) => {
            let config = resolve_config(&args.run)?;
            let defaults = TuneOptions::default();
            let opts = TuneOptions {
                trials: args.trials,
                init: defaults.init.min(args.trials),
                ..defaults
            };
            let artifacts = runner::run_tuning(&config, &opts)?;
            match artifacts.best.objective {
                Some(v) => {
                    println!("best validation NLL {v:.6} at trial {}", artifacts.best.trial)
                }
                None => println!("no successful trials"),
            }
            println!("best config:\n{}", artifacts.best_config.to_json()?);
            println!("history written to {}", artifacts.out_dir.display());
            Ok(())
        }
        Command::Shift(args) => {
            let mut config = resolve_config(&args)?;
            config.shift = true;
            let (table, out_dir) = runner::run_shift_experiment(&config)?;
            println!(
                "{} rows over {} runs written to {}",
                table.rows.len(),
                runner::SHIFT_RUNS,
                out_dir.join("shift_results.csv").display()
            );
            if !table.failures.is_empty() {
                for (seed, msg) in &table.failures {
                    eprintln!("run seed {seed} failed: {msg}");
                }
                return Err(CliError::Numeric(format!(
                    "{} of {} shift runs failed",
                    table.failures.len(),
                    runner::SHIFT_RUNS
                )));
            }
            Ok(())
        }
        Command::Ablate(args) => {
            let config = resolve_config(&args.run)?;
            let kind = AblationKind::parse(&args.sweep)?;
            let (rows, out_dir) = runner::run_ablation(kind, &config)?;
            println!("{},nll", kind.as_str());
            for (value, nll) in &rows {
                println!("{value},{nll:.6}");
            }
            println!("sweep written to {}", out_dir.display());
            Ok(())
        }
        Command::Report(args) => {
            let entries = runner::summarize_directory(Path::new(&args.out))?;
            if entries.is_empty() {
                println!("no runs with metrics.json under {}", args.out);
                return Ok(());
            }
            for (dir, value) in &entries {
                print_summary_line(dir, value);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
