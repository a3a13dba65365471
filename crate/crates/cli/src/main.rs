use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cohortdid::config::LinkName;
use cohortdid::{commands, RunConfig};

/// Group-time average treatment effects with staggered adoption.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate ATT(g, t) with simultaneous bands; writes attgt.json and bands.json
    Estimate(Overrides),
    /// Aggregate ATT(g, t) into summary parameters; writes agg.json
    Aggregate(Overrides),
    /// Pre-test conditional parallel trends; writes pretest.json
    Pretest(Overrides),
    /// Run the Monte Carlo harness on the configured design; writes simulation.json
    Simulate(Overrides),
    /// Draw a panel from the configured design; writes panel.csv and truth.json
    Generate(Overrides),
}

/// Flags override the matching config values.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML run configuration
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Bootstrap seed (simulation seed for simulate, design seed for generate)
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap draws
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    link: Option<LinkName>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    no_plot: bool,
    /// Worker threads; results do not depend on this
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn resolve(&self, command: &Command) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            match command {
                Command::Simulate(_) => cfg.simulate.seed = v,
                Command::Generate(_) => cfg.dgp.seed = v,
                _ => cfg.bootstrap.seed = v,
            }
        }
        if let Some(v) = self.draws {
            cfg.bootstrap.draws = v;
        }
        if let Some(v) = self.alpha {
            cfg.bootstrap.alpha = v;
        }
        if let Some(v) = self.link {
            cfg.link = v;
        }
        if let Some(v) = self.replications {
            cfg.simulate.replications = v;
        }
        if self.no_plot {
            cfg.plot = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let o = match &cli.command {
        Command::Estimate(o)
        | Command::Aggregate(o)
        | Command::Pretest(o)
        | Command::Simulate(o)
        | Command::Generate(o) => o,
    };
    let cfg = o.resolve(&cli.command)?;
    if let Some(n) = o.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let written = match cli.command {
        Command::Estimate(_) => commands::estimate(&cfg),
        Command::Aggregate(_) => commands::aggregate(&cfg),
        Command::Pretest(_) => commands::pretest(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Generate(_) => commands::generate(&cfg),
    }?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
