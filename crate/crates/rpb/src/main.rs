use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rpb::commands;
use rpb::io::Checkpoint;
use rpb::{CliError, CliResult, ExperimentConfig};

/// Tracking-preserving performance boosting for multi-robot navigation.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Checkpoint to load (required by `eval`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Overrides the rollout count: training pool size for `train`, test
    /// scenarios for `eval`, trajectories for `simulate`, validation
    /// rollouts for `check-robustness`.
    #[arg(long, global = true)]
    rollouts: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out the closed loop and plot the trajectories.
    Simulate,
    /// Train the boosting operator.
    Train,
    /// Evaluate a checkpoint on held-out scenarios.
    Eval,
    /// Small-gain analysis and robust tracking validation under mismatch.
    CheckRobustness,
}

fn load_checkpoint(path: Option<&PathBuf>) -> CliResult<Option<Checkpoint>> {
    path.map(|p| Checkpoint::load(p)).transpose()
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(e) = cli.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = cli.rollouts {
        match cli.command {
            Command::Train => cfg.train.samples = n,
            Command::Eval => cfg.eval.scenarios = n,
            Command::Simulate => cfg.simulate.rollouts = n,
            Command::CheckRobustness => cfg.robust.trials = n,
        }
    }
    cfg.validate()?;
    let ck = load_checkpoint(cli.checkpoint.as_ref())?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Simulate => {
            let s = commands::simulate(&cfg, ck.as_ref(), &out)?;
            for (k, r) in s.rollouts.iter().enumerate() {
                println!(
                    "rollout {k}: loss {:.3}, final error {:.4}, min distance {:.3}, penetrations {}",
                    r.loss, r.final_error, r.min_robot_distance, r.penetration_frames
                );
            }
            println!("wrote {}", s.svg.display());
        }
        Command::Train => {
            let s = commands::train(&cfg, &out)?;
            println!(
                "loss {:.3} -> {:.3} after {} epochs; wrote {}",
                s.initial_loss,
                s.final_loss,
                s.epochs,
                s.checkpoint.display()
            );
        }
        Command::Eval => {
            let ck = ck.ok_or_else(|| CliError::Config("eval needs --checkpoint".into()))?;
            let m = commands::eval(&cfg, &ck, &out)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        }
        Command::CheckRobustness => {
            let s = commands::check_robustness(&cfg, ck.as_ref(), &out)?;
            print!("{}", s.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
