use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hetlb_cli::{commands, exit_code, worker_pool, Experiment, ExperimentConfig, Outcome, PolicyName, RunContext};

#[derive(Parser)]
#[command(name = "hetlb", version, about = "Load balancing experiments on heterogeneous server systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search dyadic partitions for a subcritical routing certificate.
    Check(Common),
    /// Compute the ICRD server reservation at the configured N.
    Reserve(Common),
    /// Replicated runs of one policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy to run (default: the first configured one).
        #[arg(long)]
        policy: Option<PolicyName>,
    },
    /// Every configured policy on the same instance.
    Compare(Common),
    /// Queueing probability and busy fractions across system sizes.
    Scaling(Common),
    /// The same run from several initial states.
    Scenarios(Common),
    /// Coupled ICRD runs of a system and a uniformly slower copy.
    Couple(Common),
}

#[derive(Args)]
struct Common {
    /// Config file (default: the shipped reference config).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base replication seed; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Bad-rate threshold: assignments to a server slower than this count as bad.
    #[arg(long)]
    threshold: Option<f64>,
}

fn context(name: &str, common: &Common) -> Result<RunContext> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::reference(),
    };
    if let Some(seed) = common.seed {
        config.simulation.seed = seed;
    }
    if let Some(r) = common.replications {
        config.simulation.replications = r;
    }
    if let Some(t) = common.threshold {
        config.simulation.bad_rate_threshold = t;
    }
    let exp = Experiment::new(config)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    std::fs::create_dir_all(&out)?;
    Ok(RunContext {
        exp,
        out,
        pool: worker_pool(common.workers)?,
        command: std::env::args().skip(1).collect::<Vec<_>>().join(" "),
    })
}

fn run(cli: Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Check(c) => commands::check(&context("check", c)?),
        Command::Reserve(c) => commands::reserve(&context("reserve", c)?),
        Command::Simulate { common, policy } => commands::simulate(&context("simulate", common)?, *policy),
        Command::Compare(c) => commands::compare(&context("compare", c)?),
        Command::Scaling(c) => commands::scaling(&context("scaling", c)?),
        Command::Scenarios(c) => commands::scenarios(&context("scenarios", c)?),
        Command::Couple(c) => commands::couple(&context("couple", c)?),
    }
}

fn main() -> ExitCode {
    let result = run(Cli::parse());
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    let code = exit_code(&result);
    if let Ok(outcome) = &result {
        if *outcome != Outcome::Success {
            eprintln!("finished with status {outcome:?}");
        }
    }
    ExitCode::from(code as u8)
}
