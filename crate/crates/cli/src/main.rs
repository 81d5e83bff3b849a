use std::path::PathBuf;
use std::process::ExitCode;

use bbap_cli::output::Manifest;
use bbap_cli::{execute, CliError, Command, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bbap", version, about = "Record linkage with allelic-partition microclustering priors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Run directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario with ground truth.
    Simulate(Common),
    /// Elicit BBAP hyperparameters and draw from the prior.
    Calibrate(Common),
    /// Prior predictive boxplot of the allelic partition.
    SamplePrior(Common),
    /// Run the MCMC sampler.
    Run(Common),
    /// Point estimates from the snapshots of a previous run.
    Estimate(Common),
    /// Compare a run and its estimates with the ground truth.
    Evaluate(Common),
    /// Boxplot and K tables from a trace.
    Summarize(Common),
    /// Simulate or load, run, estimate and evaluate.
    Pipeline(Common),
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn prepare(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    config.apply_seed();
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<PathBuf, CliError> {
    let (command, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Calibrate(c) => (Command::Calibrate, c),
        Cmd::SamplePrior(c) => (Command::SamplePrior, c),
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Estimate(c) => (Command::Estimate, c),
        Cmd::Evaluate(c) => (Command::Evaluate, c),
        Cmd::Summarize(c) => (Command::Summarize, c),
        Cmd::Pipeline(c) => (Command::Pipeline, c),
        Cmd::Replay { manifest, out } => {
            let m = Manifest::load(&manifest)?;
            let command = Command::from_name(&m.command)
                .ok_or_else(|| CliError::Config(format!("unknown command {:?}", m.command)))?;
            let mut config = m.config;
            if let Some(out) = out {
                config.out = out;
            }
            return execute(command, &config);
        }
    };
    execute(command, &prepare(&common)?)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bbap: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
