use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twinrl_core::harness::{self, ExperimentConfig, SweepParam};
use twinrl_core::Error;

/// Antenna tilt training with a learned physical/twin data ratio.
#[derive(Parser, Debug)]
#[command(name = "twinrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one method on every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Method override: robust+ppo, vanilla+ppo or robust+random.
        #[arg(long)]
        method: Option<String>,
    },
    /// Train all three methods on shared seeds and print the summary table.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep kappa, penalty (xi) or noise_bound (epsilon) for the configured method.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// kappa | penalty | noise_bound
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Print the multiplication counts of a full training run.
    Flops {
        /// TOML experiment config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for metrics, manifests and transition logs.
    #[arg(long)]
    out: PathBuf,
    /// Seed list override, comma-separated.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
}

fn load(path: Option<&Path>) -> twinrl_core::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> twinrl_core::Result<ExperimentConfig> {
        let mut cfg = load(self.config.as_deref())?;
        if !self.seeds.is_empty() {
            cfg.experiment.seeds = self.seeds.clone();
        }
        if let Some(e) = self.epochs {
            cfg.experiment.epochs = e;
        }
        cfg.experiment.output_dir = self.out.clone();
        cfg.validate()?;
        std::fs::create_dir_all(&self.out)?;
        Ok(cfg)
    }
}

fn print_summary(rows: &[harness::SummaryRow]) -> twinrl_core::Result<()> {
    harness::write_summary(rows, std::io::stdout().lock())
}

fn execute(cli: Cli) -> twinrl_core::Result<()> {
    match cli.command {
        Command::Run { common, method } => {
            let mut cfg = common.resolve()?;
            if let Some(m) = method {
                cfg.experiment.method = m.parse()?;
            }
            let mut rows = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let out = harness::run_seed(&cfg, cfg.experiment.method, seed, Some(&common.out))?;
                rows.push(harness::summarize(cfg.experiment.method.as_str(), seed, &out.records));
            }
            print_summary(&rows)
        }
        Command::Compare { common } => {
            let cfg = common.resolve()?;
            let rows = harness::compare(&cfg, Some(&common.out))?;
            let path = common.out.join("summary.csv");
            harness::write_summary(&rows, std::fs::File::create(path)?)?;
            print_summary(&rows)
        }
        Command::Ablate { common, param, values } => {
            let cfg = common.resolve()?;
            let param: SweepParam = param.parse()?;
            let rows = harness::ablate(&cfg, param, &values, Some(&common.out))?;
            print_summary(&rows)
        }
        Command::Flops { config } => {
            let cfg = load(config.as_deref())?;
            let (first, total) = harness::estimate_training_flops(&cfg);
            println!("first_level_flops={first}");
            println!("total_flops={total}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Divergence(_) => 3,
                _ => 1,
            })
        }
    }
}
