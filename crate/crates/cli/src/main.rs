use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hinfq_cli::{AmodCommand, CliResult, RunReport, ScenarioConfig};

#[derive(Parser)]
#[command(name = "hinfq", version, about = "Model-free H-infinity Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides learner.seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the game Riccati equation by value iteration.
    SolveRiccati(Common),
    /// Run the model-free learner.
    Learn(Common),
    /// AMoD plant utilities.
    Amod {
        #[command(subcommand)]
        action: AmodAction,
    },
    /// Time recursive against batch critic updates.
    Bench(Common),
}

#[derive(Subcommand)]
enum AmodAction {
    /// Write the system matrices and report dimensions.
    Build(Common),
    /// Solve the minimal rebalancing problem.
    Rebalance(Common),
    /// Closed-loop simulation under fixed gains.
    Simulate(Common),
}

fn load(common: &Common) -> CliResult<(ScenarioConfig, PathBuf)> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.learner.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn run(cli: Cli) -> CliResult<RunReport> {
    match cli.command {
        Command::SolveRiccati(c) => {
            let (cfg, out) = load(&c)?;
            hinfq_cli::cmd_solve_riccati(&cfg, &out)
        }
        Command::Learn(c) => {
            let (cfg, out) = load(&c)?;
            hinfq_cli::cmd_learn(&cfg, &out)
        }
        Command::Bench(c) => {
            let (cfg, out) = load(&c)?;
            hinfq_cli::cmd_bench(&cfg, &out)
        }
        Command::Amod { action } => {
            let (sub, c) = match action {
                AmodAction::Build(c) => (AmodCommand::Build, c),
                AmodAction::Rebalance(c) => (AmodCommand::Rebalance, c),
                AmodAction::Simulate(c) => (AmodCommand::Simulate, c),
            };
            let (cfg, out) = load(&c)?;
            hinfq_cli::cmd_amod(&cfg, sub, &out)
        }
    }
}

fn print_report(report: &RunReport) {
    println!("command: {}", report.command);
    if let Some(c) = report.converged {
        println!("converged: {c}");
    }
    if let Some(i) = report.iterations {
        println!("iterations: {i}");
    }
    if let Some(e) = report.s_rel_error {
        println!("s_rel_error: {e:e}");
    }
    if let Some(g) = report.gamma {
        println!("gamma: {g}");
    }
    for (k, v) in &report.details {
        println!("{k}: {v}");
    }
    println!("wall_seconds: {:.3}", report.wall_seconds);
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            print_report(&report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
