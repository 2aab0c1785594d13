use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmcmc_cli::commands::{cmd_compare, cmd_generate, cmd_run, cmd_sweep, cmd_tune, cmd_verify};
use pmcmc_cli::config::{load, Loaded};
use pmcmc_cli::{CliError, CliResult};

/// Particle MCMC experiments.
///
/// Every config key can be overridden with `--set path=value` or with a
/// `PMCMC_` environment variable, `__` separating path segments
/// (`PMCMC_SAMPLER__PARTICLES=200`). Precedence: flags, then `--set`, then
/// environment, then the file.
#[derive(Parser)]
#[command(name = "pmcmc", version)]
struct Cli {
    /// Experiment config (TOML). `compare` takes it more than once.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Size of the replicate / sweep-point worker pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override a config key, e.g. `--set sampler.particles=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured data set.
    Generate,
    /// Run the configured sampler.
    Run {
        /// Continue from the last checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run a grid over one config key.
    Sweep {
        #[arg(long)]
        resume: bool,
    },
    /// Run several configs and rank them by ESS per second.
    Compare,
    /// Find the particle count giving a target log-likelihood variance.
    Tune,
    /// Check the config hashes embedded in an output directory.
    Verify {
        /// Directory to check (defaults to --out).
        dir: Option<PathBuf>,
    },
}

impl Cli {
    fn load_all(&self) -> CliResult<Vec<Loaded>> {
        if self.config.is_empty() {
            return Err(CliError::Config("--config is required".into()));
        }
        self.config
            .iter()
            .map(|p| load(p, &self.sets, self.seed, self.out.as_deref(), self.workers))
            .collect()
    }

    fn load_one(&self) -> CliResult<Loaded> {
        if self.config.len() > 1 {
            return Err(CliError::Config("this command takes a single --config".into()));
        }
        Ok(self.load_all()?.remove(0))
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("serialisable"));
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate => {
            let path = cmd_generate(&cli.load_one()?.config)?;
            println!("{}", path.display());
        }
        Command::Run { resume } => {
            let s = cmd_run(&cli.load_one()?.config, *resume)?;
            let rates: Vec<f64> = s.replicates.iter().map(|r| r.acceptance_rate).collect();
            print_json(&serde_json::json!({ "configHash": s.config_hash, "acceptanceRate": rates }));
        }
        Command::Sweep { resume } => {
            let path = cmd_sweep(&cli.load_one()?, *resume)?;
            println!("{}", path.display());
        }
        Command::Compare => {
            let configs: Vec<_> = cli.load_all()?.into_iter().map(|l| l.config).collect();
            let dir = cli.out.clone().unwrap_or_else(|| configs[0].output.dir.clone());
            let c = cmd_compare(&configs, &dir)?;
            print_json(&c.rankings);
        }
        Command::Tune => {
            let r = cmd_tune(&cli.load_one()?.config)?;
            print_json(&r);
        }
        Command::Verify { dir } => {
            let expected = if cli.config.is_empty() { None } else { Some(cli.load_one()?.config) };
            let dir = dir
                .clone()
                .or_else(|| cli.out.clone())
                .or_else(|| expected.as_ref().map(|c| c.output.dir.clone()))
                .ok_or_else(|| CliError::Config("verify needs a directory".into()))?;
            let r = cmd_verify(&dir, expected.as_ref())?;
            print_json(&r);
            if !r.mismatched.is_empty() {
                return Err(CliError::Config(format!("config hash mismatch in {}", r.mismatched.join(", "))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
