use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapebench_cli::{config::ExperimentConfig, output_dir, pipeline, report, CliError, Result, RunDir};

#[derive(Parser)]
#[command(name = "shapebench", version, about = "Shape correspondence benchmark pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the ensemble and register it.
    Generate(Args),
    /// Compute correspondences with every configured method.
    Correspond(Args),
    /// Metric curves, mode walks and clustering.
    Evaluate(Args),
    /// Ostium measurements and paired t-tests against ground truth.
    Validate(Args),
    /// Summarise an existing run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages followed by the report.
    Run(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config; stages after `generate` default to the copy in the run directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &Args, required: bool) -> Result<(ExperimentConfig, String, PathBuf)> {
    let path = match (&args.config, &args.out) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) if !required => RunDir::new(out).config(),
        _ => return Err(CliError::Config("--config is required".into())),
    };
    let (config, text) = ExperimentConfig::load(&path)?;
    let out = output_dir(&config, args.out.as_deref())?;
    Ok((config, text, out))
}

fn stage(
    args: &Args,
    f: impl FnOnce(&RunDir, &ExperimentConfig) -> Result<Vec<pipeline::MethodFailure>>,
) -> Result<bool> {
    let (config, _, out) = load(args, false)?;
    Ok(f(&RunDir::new(out), &config)?.is_empty())
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Generate(args) => {
            let (config, text, out) = load(&args, true)?;
            pipeline::generate(&RunDir::new(out), &config, &text)?;
            Ok(true)
        }
        Command::Correspond(args) => stage(&args, pipeline::correspond),
        Command::Evaluate(args) => stage(&args, pipeline::evaluate),
        Command::Validate(args) => stage(&args, pipeline::validate),
        Command::Report { out } => {
            let r = report::report(&RunDir::new(&out))?;
            print!("{}", report::summary_csv(&r.methods));
            Ok(r.failures.is_empty())
        }
        Command::Run(args) => {
            let (config, text, out) = load(&args, true)?;
            let r = shapebench_cli::run_config(&config, &text, Path::new(&out))?;
            print!("{}", report::summary_csv(&r.methods));
            for f in &r.failures {
                eprintln!("{} failed in {}: {}", f.method, f.stage, f.message);
            }
            Ok(r.failures.is_empty())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
