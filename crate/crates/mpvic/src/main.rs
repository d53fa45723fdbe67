//! Command line front end. Exit codes: 0 success, 2 bad configuration,
//! 3 runtime failure, 4 planner-versus-grid mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpvic::harness::config::task_config_by_name;
use mpvic::harness::{cli_run, run_summarize, CliOverrides, ExperimentConfig, HarnessError, Mode};

#[derive(Parser)]
#[command(
    name = "mpvic",
    version,
    about = "Variable impedance control lab: explore, train, evaluate, sweep"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect transitions with curiosity-driven rollouts, training as it goes
    Explore(RunArgs),
    /// Train a fresh ensemble on a saved dataset
    Train(RunArgs),
    /// Run planner episodes on a task and summarize them
    Eval(RunArgs),
    /// Evaluate every cell of the weight-scaling grid
    Sweep(RunArgs),
    /// Compare the planner against an exhaustive grid on the known plant
    OracleCheck(RunArgs),
    /// Aggregate saved episode logs without running anything
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; trial seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
    /// Task name: compliance, falling, or push
    #[arg(long)]
    task: Option<String>,
    /// Scale on the error weights
    #[arg(long)]
    alpha_q: Option<f64>,
    /// Scale on the stiffness penalty
    #[arg(long)]
    alpha_r: Option<f64>,
    /// Episodes per evaluation
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model checkpoint to load or write
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Explore only: total transition budget across trials
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Episode CSVs to aggregate
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for the bootstrap bands
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Task whose commanded reference the logs tracked
    #[arg(long)]
    task: Option<String>,
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    let command: Vec<String> = std::env::args().collect();
    let (mode, args) = match cli.cmd {
        Cmd::Summarize(args) => {
            let task = args.task.as_deref().map(task_config_by_name).transpose()?;
            let outcome = run_summarize(&args.logs, &args.out, args.seed, task, command)?;
            return Ok(format!(
                "summarize: {} logs -> {}",
                args.logs.len(),
                outcome.manifest_path.display()
            ));
        }
        Cmd::Explore(a) => (Mode::Explore, a),
        Cmd::Train(a) => (Mode::Train, a),
        Cmd::Eval(a) => (Mode::Eval, a),
        Cmd::Sweep(a) => (Mode::Sweep, a),
        Cmd::OracleCheck(a) => (Mode::OracleCheck, a),
    };

    let base = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let overrides = CliOverrides {
        seed: args.seed,
        task: args.task,
        alpha_q: args.alpha_q,
        alpha_r: args.alpha_r,
        trials: args.trials,
        out: args.out,
        checkpoint: args.checkpoint,
        steps: args.steps,
    };
    let cfg = base.resolve(mode, &overrides)?;
    let outcome = cli_run(&cfg, command)?;
    Ok(format!(
        "{}: seed {}, {} outputs in {} ({:.1}s) -> {}",
        mode.name(),
        cfg.seed,
        outcome.manifest.outputs.len(),
        cfg.paths.out_dir.display(),
        outcome.manifest.wall_time_s,
        outcome.manifest_path.display()
    ))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
